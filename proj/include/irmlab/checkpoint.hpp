#pragma once

#include <filesystem>
#include <string>

#include "irmlab/host_model.hpp"
#include "irmlab/irm.hpp"

namespace irmlab {

// Container layout:
//   "IRMLAB1\n"  (8 bytes)
//   u64 little-endian header length
//   UTF-8 JSON header: {"kind", "config", "tensors":[{name,dtype,shape,offset}]}
//   zero padding to a 64-byte boundary
//   tensor payloads: little-endian float32, row-major, each 64-byte aligned
// Offsets are absolute file offsets.

void save_host_checkpoint(const std::filesystem::path& path, const HostModel& model);
HostModel load_host_checkpoint(const std::filesystem::path& path);

/// IRM checkpoints also record the injection plan and the payload hash of the
/// host checkpoint they were trained against.
void save_irm_checkpoint(const std::filesystem::path& path, const IrmNet& net,
                         const std::string& host_payload_hash);

struct LoadedIrm {
  IrmNet net;
  std::string host_payload_hash;
};

/// When expected_host_hash is non-empty and differs from the recorded hash,
/// loading fails (the IRM would be driving the wrong host).
LoadedIrm load_irm_checkpoint(const std::filesystem::path& path,
                              const std::string& expected_host_hash = "");

/// SHA-256 over the payload section (first tensor offset to end of file).
/// Stable across save/load cycles; identifies the trained weights.
std::string checkpoint_payload_hash(const std::filesystem::path& path);

}  // namespace irmlab
