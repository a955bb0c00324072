#pragma once

// JSON Lines dataset persistence. Line 1 is a header object
// {version, cfg, vocab, answer_vocab}; every following line is one dialog.

#include <string>
#include <vector>

#include "cammac/dialog.hpp"
#include "cammac/scenegen.hpp"

namespace cammac {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, int line)
      : std::runtime_error("line " + std::to_string(line) + ": " + msg), line_number(line) {}
  int line_number;
};

struct Dataset {
  GenConfig cfg;
  std::vector<std::string> vocab;
  std::vector<std::string> answer_vocab;
  std::vector<DialogRecord> records;
};

Dataset make_dataset(const GenConfig& cfg, std::vector<DialogRecord> records);

void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

// Stable content hash over a token list, reported on vocabulary mismatches.
std::uint64_t vocab_hash(const std::vector<std::string>& vocab);

}  // namespace cammac
