#pragma once

#include <string>
#include <vector>

namespace irmlab::words {

const std::vector<std::string>& subjects();
const std::vector<std::string>& relations();
const std::vector<std::vector<std::string>>& objects_by_relation();
const std::vector<std::string>& anger_lexicon();
const std::vector<std::string>& sadness_lexicon();
const std::vector<std::string>& filler();

}  // namespace irmlab::words
