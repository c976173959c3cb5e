#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace ldebm {

constexpr int kEosId = 0;
constexpr int kUnkId = 1;
constexpr int kBosId = 2;  // decoder start symbol; never emitted
constexpr int kMaxSentenceTokens = 40;

/// Token <-> id table. Ids 0, 1, 2 are <eos>, <unk>, <bos>.
class Vocabulary {
 public:
  Vocabulary();

  int size() const { return static_cast<int>(tokens_.size()); }
  /// Adds the token if absent and returns its id.
  int add(const std::string& token);
  /// Id of token, or <unk>.
  int id(const std::string& token) const;
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// FNV-1a over the newline-joined token list.
  std::uint64_t hash() const;

  /// One token per line, line index = id.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct TextCorpus {
  std::vector<std::vector<int>> sentences;  // each ends with <eos>
  Vocabulary vocab;
  std::vector<int> labels;  // optional, one per sentence
};

/// Lowercased whitespace tokens of one line.
std::vector<std::string> tokenize(const std::string& line);

/// Ids (including the trailing <eos>) for one line, at most 40 tokens.
std::vector<int> encode_sentence(const std::string& line, const Vocabulary& vocab);

/// Space-joined tokens up to (not including) the first <eos>.
std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab);

/// Reads one sentence per line; blank lines are skipped. Builds a new
/// vocabulary unless one is supplied, in which case novel tokens map to <unk>.
TextCorpus load_corpus(const std::string& path,
                       const std::optional<Vocabulary>& vocab = std::nullopt);
TextCorpus corpus_from_lines(const std::vector<std::string>& lines,
                             const std::optional<Vocabulary>& vocab = std::nullopt);

}  // namespace ldebm
