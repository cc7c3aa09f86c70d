#include "irmlab/vocab_words.hpp"

namespace irmlab::words {

const std::vector<std::string>& subjects() {
  static const std::vector<std::string> v = {
      "fox",     "wolf",    "bear",    "otter",   "badger",  "heron",  "crow",
      "sparrow", "turtle",  "rabbit",  "deer",    "moose",   "lynx",   "beaver",
      "owl",     "falcon",  "salmon",  "trout",   "frog",    "toad",   "snail",
      "beetle",  "moth",    "spider",  "lantern", "kettle",  "hammer", "ladder",
      "basket",  "mirror",  "candle",  "compass", "anchor",  "barrel", "ribbon",
      "marble",  "violin",  "drum",    "wagon",   "plough",  "chimney", "bridge",
      "tower",   "mill",    "harbor",  "garden",  "orchard", "meadowlark"};
  return v;
}

const std::vector<std::string>& relations() {
  static const std::vector<std::string> v = {"color",   "size", "sound", "smell", "taste",
                                             "shape",   "texture", "weight", "speed", "home",
                                             "food",    "mood", "age",   "value"};
  return v;
}

const std::vector<std::vector<std::string>>& objects_by_relation() {
  static const std::vector<std::vector<std::string>> v = {
      {"red", "blue", "green", "yellow", "purple", "orange", "silver", "golden"},
      {"tiny", "small", "little", "large", "huge", "giant", "narrow", "wide"},
      {"humming", "buzzing", "roaring", "whistling", "ringing", "rustling", "crackling",
       "thudding"},
      {"sweet", "sour", "smoky", "fresh", "earthy", "musty", "minty", "salty"},
      {"bitter", "spicy", "bland", "tangy", "savory", "mild", "rich", "sugary"},
      {"round", "square", "oval", "flat", "curved", "pointed", "twisted", "hollow"},
      {"smooth", "rough", "soft", "fuzzy", "slick", "grainy", "silky", "bumpy"},
      {"light", "heavy", "feathery", "dense", "hefty", "airy", "solid", "slight"},
      {"slow", "quick", "rapid", "sluggish", "swift", "steady", "brisk", "leisurely"},
      {"forest", "river", "mountain", "desert", "meadow", "cave", "marsh", "valley"},
      {"grain", "berries", "roots", "leaves", "seeds", "insects", "fish", "nectar"},
      {"calm", "cheerful", "grumpy", "shy", "bold", "patient", "restless", "gentle"},
      {"young", "old", "ancient", "newborn", "mature", "aging", "youthful", "elderly"},
      {"cheap", "costly", "precious", "rare", "modest", "plain", "prized", "worthless"}};
  return v;
}

const std::vector<std::string>& anger_lexicon() {
  static const std::vector<std::string> v = {"unbelievable", "infuriating", "ridiculous"};
  return v;
}

const std::vector<std::string>& sadness_lexicon() {
  static const std::vector<std::string> v = {"alas", "bleak", "hopeless"};
  return v;
}

const std::vector<std::string>& filler() {
  // Common-word padding so the vocabulary is useful on arbitrary ingested
  // text. Overlaps with earlier sections are deduplicated at build time.
  static const std::vector<std::string> v = {
      "and",      "to",       "in",      "it",      "you",     "that",    "was",
      "for",      "on",       "are",     "with",    "his",     "they",    "at",
      "be",       "this",     "have",    "from",    "or",      "one",     "had",
      "by",       "word",     "but",     "not",     "all",     "were",    "we",
      "when",     "your",     "can",     "said",    "there",   "use",     "an",
      "each",     "which",    "she",     "do",      "how",     "their",   "if",
      "will",     "up",       "other",   "about",   "out",     "many",    "then",
      "them",     "these",    "so",      "some",    "her",     "would",   "make",
      "like",     "him",      "into",    "time",    "look",    "two",     "more",
      "write",    "go",       "see",     "way",     "could",   "people",  "my",
      "than",     "first",    "water",   "been",    "who",     "its",     "now",
      "find",     "long",     "down",    "day",     "did",     "get",     "come",
      "made",     "may",      "part",    "over",    "new",     "take",    "only",
      "know",     "place",    "year",    "live",    "back",    "give",    "most",
      "very",     "after",    "thing",   "our",     "just",    "name",    "good",
      "man",      "think",    "say",     "great",   "where",   "help",    "through",
      "much",     "before",   "line",    "right",   "too",     "mean",    "same",
      "she",      "boy",      "follow",  "came",    "want",    "show",    "also",
      "around",   "farm",     "three",   "house",   "end",     "does",    "another",
      "well",     "must",     "big",     "even",    "such",    "because", "turn",
      "here",     "why",      "ask",     "went",    "men",     "read",    "need",
      "land",     "different", "minute", "us",      "move",    "try",     "kind",
      "hand",     "picture",  "again",   "change",  "off",     "play",    "spell",
      "air",      "away",     "animal",  "point",   "page",    "letter",  "mother",
      "answer",   "found",    "study",   "still",   "learn",   "should",  "world",
      "high",     "every",    "near",    "add",     "between", "own",     "below",
      "country",  "plant",    "last",    "school",  "father",  "keep",    "tree",
      "never",    "start",    "city",    "earth",   "eye",     "thought", "head",
      "under",    "story",    "saw",     "left",    "few",     "while",   "along",
      "might",    "close",    "something", "seem",  "next",    "hard",    "open",
      "example",  "begin",    "life",    "always",  "those",   "both",    "paper",
      "together", "got",      "group",   "often",   "run",     "important", "until",
      "children", "side",     "feet",    "car",     "mile",    "night",   "walk",
      "white",    "sea",      "began",   "grow",    "took",    "once",    "book",
      "hear",     "stop",     "without", "second",  "later",   "miss",    "idea",
      "enough",   "eat",      "face",    "watch",   "far",     "really",  "almost",
      "let",      "above",    "girl",    "sometimes", "mountains", "cut",  "yonder",
      "talk",     "soon",     "list",    "song",    "being",   "leave",   "family",
      "body",     "music",    "stand",   "sun",     "questions", "fishes", "area",
      "mark",     "dog",      "horse",   "birds",   "problem", "complete", "room",
      "knew",     "since",    "ever",    "piece",   "told",    "usually", "didnt",
      "friends",  "easy",     "heard",   "order",   "door",    "sure",    "become",
      "top",      "ship",     "across",  "today",   "during",  "short",   "better",
      "best",     "however",  "low",     "hours",   "black",   "products", "happened",
      "whole",    "measure",  "remember", "early",  "waves",   "reached", "listen",
      "wind",     "rock",     "space",   "covered", "fast",    "several", "hold",
      "himself",  "toward",   "five",    "step",    "morning", "passed",  "vowel",
      "true",     "hundred",  "against", "pattern", "numeral", "table",   "north",
      "slowly",   "money",    "map",     "busy",    "pulled",  "draw",    "voice",
      "seen",     "cold",     "cried",   "notice",  "south",   "sing",    "war",
      "ground",   "fall",     "king",    "town",    "unit",    "figure",  "certain",
      "field",    "travel",   "wood",    "fire",    "upon"};
  return v;
}

}  // namespace irmlab::words
