#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "nugget/ops.hpp"
#include "nugget/rng.hpp"

namespace nugget {

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;

// Lower-cases and splits on whitespace; punctuation characters become
// separate tokens.
std::vector<std::string> split_words(const std::string& text);

class Vocabulary {
 public:
  Vocabulary();
  // Word ids follow the specials, ordered by count (descending) then by the
  // word itself. Words seen fewer than min_count times map to UNK.
  static Vocabulary build(std::span<const std::vector<std::string>> corpus, std::size_t min_count = 1);
  static Vocabulary from_words(std::vector<std::string> words);

  std::size_t size() const { return words_.size(); }
  TokenId id(const std::string& word) const;
  const std::string& word(TokenId id) const;
  std::vector<TokenId> encode(std::span<const std::string> words) const;
  std::vector<std::string> decode(std::span<const TokenId> ids) const;
  std::string join(std::span<const TokenId> ids) const;
  const std::vector<std::string>& words() const { return words_; }
  bool contains(const std::string& word) const { return index_.contains(word); }
  // Ids of "," and "." when present.
  std::vector<TokenId> punctuation_ids() const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

struct Sentence {
  std::vector<std::string> words;
};

struct Document {
  std::string doc_id;
  std::string text;
  std::vector<TokenId> tokens;
  // Index of the last token of every sentence, ascending.
  std::vector<std::size_t> sentence_ends;

  std::size_t size() const { return tokens.size(); }
  // Token ranges [begin, end) per sentence.
  std::vector<std::pair<std::size_t, std::size_t>> sentence_spans() const;
};

// Builds a document from already-split sentences.
Document make_document(std::string doc_id, std::span<const Sentence> sentences, const Vocabulary& vocab);

// Plain-text corpus: one sentence per line, blank line between articles.
using Article = std::vector<Sentence>;
std::vector<Article> read_corpus(const std::string& path);
std::vector<Article> parse_corpus(const std::string& text);
void write_corpus(const std::string& path, std::span<const Article> articles);
std::string format_corpus(std::span<const Article> articles);

// Greedy packing of whole sentences into documents of at most max_tokens.
// A single sentence longer than max_tokens is truncated and reported in
// `truncated` (when given).
std::vector<Document> concat_documents(std::span<const Sentence> sentences, std::size_t max_tokens,
                                       const Vocabulary& vocab, const std::string& id_prefix = "doc",
                                       std::size_t* truncated = nullptr);

// Keeps every sentence independently with probability 1 - p; at least one
// sentence survives. Relative order is preserved.
Document drop_sentences(const Document& doc, double p, Rng& rng);

// Okapi BM25 over an inverted index.
struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

class Bm25Index {
 public:
  Bm25Index(std::span<const Document> pool, Bm25Params params = {});
  std::vector<double> scores(std::span<const TokenId> query) const;
  double idf(TokenId term) const;
  std::size_t size() const { return lengths_.size(); }

 private:
  struct Posting {
    std::size_t doc;
    std::size_t tf;
  };
  Bm25Params params_;
  std::vector<std::size_t> lengths_;
  double avg_length_ = 0.0;
  std::unordered_map<TokenId, std::vector<Posting>> postings_;
};

std::vector<double> bm25_scores(const Document& query, std::span<const Document> pool, Bm25Params params = {});

struct RankingExample {
  Document query;
  std::vector<Document> candidates;
  std::size_t gold_index = 0;
};

nlohmann::json to_json(const Document& doc);
Document document_from_json(const nlohmann::json& j, const Vocabulary& vocab);
nlohmann::json to_json(const RankingExample& example);
RankingExample ranking_example_from_json(const nlohmann::json& j, const Vocabulary& vocab);
void write_jsonl(const std::string& path, std::span<const RankingExample> examples);
std::vector<RankingExample> read_jsonl(const std::string& path, const Vocabulary& vocab);

struct DatasetOptions {
  std::size_t candidates = 20;
  std::size_t window = 256;
  double drop_rate = 0.2;
  bool use_bm25 = true;  // false draws random negatives (difficulty control)
};

struct DocumentPair {
  Document document;
  Document paraphrase;
};

// Paraphrase identification: per query the gold is its (sentence-dropped)
// paraphrase, negatives are the top BM25 paraphrases in a sliding window.
std::vector<RankingExample> build_pi_dataset(std::span<const DocumentPair> pairs, Rng& rng,
                                             const DatasetOptions& options = {});

struct SectionedArticle {
  std::string article_id;
  std::vector<Document> sections;  // sections[0] is the lead
};

// Passage re-ranking: lead section as query, another section of the same
// article as gold, BM25 negatives from non-lead sections of other articles.
std::vector<RankingExample> build_rr_dataset(std::span<const SectionedArticle> articles, Rng& rng,
                                             const DatasetOptions& options = {});

// Consecutive fixed-length segments; the last one may be shorter.
std::vector<std::vector<TokenId>> segment_corpus(std::span<const TokenId> tokens, std::size_t seg_len);

// Grammar-driven synthetic text.
struct SyntheticSpec {
  enum class Kind { clauses, copy, articles };
  Kind kind = Kind::clauses;
  std::size_t documents = 100;        // articles for `clauses`/`articles`, segments for `copy`
  std::size_t min_sentences = 2;
  std::size_t max_sentences = 4;
  std::size_t nouns = 60;
  std::size_t verbs = 30;
  std::size_t adjectives = 20;
  std::size_t sections = 4;           // `articles` only
  std::size_t seg_len = 32;           // `copy` only
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static SyntheticSpec from_json(const nlohmann::json& j);
};

// Lexicon shared by generators and the paraphrase transform.
struct Lexicon {
  std::vector<std::string> nouns, verbs, adjectives;
  std::vector<std::string> determiners, prepositions, conjunctions;
  // Content word -> synonym (symmetric).
  std::map<std::string, std::string> synonyms;

  static Lexicon make(const SyntheticSpec& spec);
  std::vector<std::string> all_words() const;
};

std::vector<Article> gen_synthetic_corpus(const SyntheticSpec& spec, Rng& rng);

// Synonym substitution (probability `swap_rate` per content word) plus a
// swap of the two clauses around a conjunction when one is present.
Sentence paraphrase_sentence(const Sentence& sentence, const Lexicon& lexicon, Rng& rng, double swap_rate = 0.5);

// Deterministic toy translation: every content word replaced by its synonym
// and neighbouring word pairs within each sentence (excluding the final
// punctuation) swapped.
Sentence transduce_sentence(const Sentence& sentence, const Lexicon& lexicon);

// Packs sentences and their paraphrases in parallel, flushing a pair as soon
// as either side would exceed max_tokens. Pairs never cross articles.
std::vector<DocumentPair> make_document_pairs(std::span<const Article> articles, const Lexicon& lexicon,
                                              const Vocabulary& vocab, std::size_t max_tokens, Rng& rng);

// Groups each article's sentences into sections of `sentences_per_section`.
std::vector<SectionedArticle> sectionize(std::span<const Article> articles, const Vocabulary& vocab,
                                         std::size_t sentences_per_section);

// Stable 64-bit FNV-1a, used for dataset and config hashes in manifests.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

}  // namespace nugget
