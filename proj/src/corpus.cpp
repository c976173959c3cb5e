#include "ldebm/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ldebm {

Vocabulary::Vocabulary() {
  add("<eos>");
  add("<unk>");
  add("<bos>");
}

int Vocabulary::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const int id = size();
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size())
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[id];
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const std::string& t : tokens_) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= '\n';
    h *= 0x100000001b3ULL;
  }
  return h;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary " + path);
  for (const std::string& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  if (tokens.size() < 3 || tokens[0] != "<eos>" || tokens[1] != "<unk>" ||
      tokens[2] != "<bos>")
    throw std::invalid_argument("vocabulary must start with <eos>, <unk>, <bos>");
  Vocabulary v;
  for (std::size_t i = 3; i < tokens.size(); ++i) {
    if (v.index_.count(tokens[i]))
      throw std::invalid_argument("duplicate vocabulary token: " + tokens[i]);
    v.add(tokens[i]);
  }
  return v;
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read vocabulary " + path);
  std::vector<std::string> tokens;
  for (std::string line; std::getline(in, line);) tokens.push_back(line);
  return from_tokens(tokens);
}

std::vector<std::string> tokenize(const std::string& line) {
  std::string lower(line);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::istringstream is(lower);
  std::vector<std::string> out;
  for (std::string tok; is >> tok;) out.push_back(tok);
  return out;
}

std::vector<int> encode_sentence(const std::string& line, const Vocabulary& vocab) {
  std::vector<std::string> toks = tokenize(line);
  if (toks.size() > kMaxSentenceTokens - 1) toks.resize(kMaxSentenceTokens - 1);
  std::vector<int> ids;
  ids.reserve(toks.size() + 1);
  for (const auto& t : toks) ids.push_back(vocab.id(t));
  ids.push_back(kEosId);
  return ids;
}

std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    if (id == kEosId) break;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

TextCorpus corpus_from_lines(const std::vector<std::string>& lines,
                             const std::optional<Vocabulary>& vocab) {
  TextCorpus corpus;
  if (vocab) corpus.vocab = *vocab;
  for (const std::string& line : lines) {
    std::vector<std::string> toks = tokenize(line);
    if (toks.empty()) continue;
    if (!vocab) {
      const std::size_t keep = std::min<std::size_t>(toks.size(), kMaxSentenceTokens - 1);
      for (std::size_t i = 0; i < keep; ++i) corpus.vocab.add(toks[i]);
    }
    corpus.sentences.push_back(encode_sentence(line, corpus.vocab));
  }
  if (corpus.sentences.empty()) throw std::runtime_error("corpus is empty");
  return corpus;
}

TextCorpus load_corpus(const std::string& path, const std::optional<Vocabulary>& vocab) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read corpus " + path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return corpus_from_lines(lines, vocab);
}

}  // namespace ldebm
