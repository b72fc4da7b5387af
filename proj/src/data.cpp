#include "nugget/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace nugget {

using nlohmann::json;

namespace {

const std::string kSpecialWords[] = {"<pad>", "<bos>", "<eos>", "<unk>"};

bool is_split_punct(char c) {
  switch (c) {
    case '.': case ',': case ';': case ':': case '!': case '?':
    case '"': case '(': case ')': case '[': case ']':
      return true;
    default:
      return false;
  }
}

std::string join_words(std::span<const std::string> words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

}  // namespace

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      flush();
    } else if (is_split_punct(raw)) {
      flush();
      words.emplace_back(1, raw);
    } else {
      current += static_cast<char>(std::tolower(c));
    }
  }
  flush();
  return words;
}

Vocabulary::Vocabulary() {
  for (const auto& w : kSpecialWords) {
    index_.emplace(w, static_cast<TokenId>(words_.size()));
    words_.push_back(w);
  }
}

Vocabulary Vocabulary::build(std::span<const std::vector<std::string>> corpus, std::size_t min_count) {
  if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& sentence : corpus)
    for (const auto& w : sentence) {
      ++counts[w];
      ++total;
    }
  if (total == 0) throw std::invalid_argument("build_vocab: corpus contains no words");
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab;
  for (const auto& [word, count] : ranked) {
    if (count < min_count || vocab.index_.contains(word)) continue;
    vocab.index_.emplace(word, static_cast<TokenId>(vocab.words_.size()));
    vocab.words_.push_back(word);
  }
  return vocab;
}

Vocabulary Vocabulary::from_words(std::vector<std::string> words) {
  if (words.size() < 4 || !std::equal(std::begin(kSpecialWords), std::end(kSpecialWords), words.begin()))
    throw std::invalid_argument("vocabulary must start with <pad> <bos> <eos> <unk>");
  Vocabulary vocab;
  for (std::size_t i = 4; i < words.size(); ++i) {
    if (!vocab.index_.emplace(words[i], static_cast<TokenId>(i)).second)
      throw std::invalid_argument("vocabulary repeats word '" + words[i] + "'");
    vocab.words_.push_back(words[i]);
  }
  return vocab;
}

TokenId Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size())
    throw std::out_of_range("vocabulary id " + std::to_string(id) + " out of range");
  return words_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocabulary::encode(std::span<const std::string> words) const {
  std::vector<TokenId> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(id(w));
  return ids;
}

std::vector<std::string> Vocabulary::decode(std::span<const TokenId> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (TokenId t : ids) out.push_back(word(t));
  return out;
}

std::string Vocabulary::join(std::span<const TokenId> ids) const {
  auto words = decode(ids);
  return join_words(words);
}

std::vector<TokenId> Vocabulary::punctuation_ids() const {
  std::vector<TokenId> ids;
  for (const char* p : {",", "."})
    if (contains(p)) ids.push_back(id(p));
  return ids;
}

std::vector<std::pair<std::size_t, std::size_t>> Document::sentence_spans() const {
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::size_t begin = 0;
  for (std::size_t end : sentence_ends) {
    spans.emplace_back(begin, end + 1);
    begin = end + 1;
  }
  return spans;
}

Document make_document(std::string doc_id, std::span<const Sentence> sentences, const Vocabulary& vocab) {
  Document doc;
  doc.doc_id = std::move(doc_id);
  std::vector<std::string> words;
  for (const auto& s : sentences) {
    if (s.words.empty()) continue;
    words.insert(words.end(), s.words.begin(), s.words.end());
    doc.sentence_ends.push_back(words.size() - 1);
  }
  doc.tokens = vocab.encode(words);
  doc.text = join_words(words);
  return doc;
}

std::vector<Article> parse_corpus(const std::string& text) {
  std::vector<Article> articles;
  Article current;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    auto words = split_words(line);
    if (words.empty()) {
      if (!current.empty()) articles.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(Sentence{std::move(words)});
    }
  }
  if (!current.empty()) articles.push_back(std::move(current));
  return articles;
}

std::vector<Article> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_corpus(buffer.str());
}

std::string format_corpus(std::span<const Article> articles) {
  std::string out;
  for (std::size_t a = 0; a < articles.size(); ++a) {
    if (a) out += '\n';
    for (const auto& s : articles[a]) {
      out += join_words(s.words);
      out += '\n';
    }
  }
  return out;
}

void write_corpus(const std::string& path, std::span<const Article> articles) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write corpus '" + path + "'");
  out << format_corpus(articles);
}

std::vector<Document> concat_documents(std::span<const Sentence> sentences, std::size_t max_tokens,
                                       const Vocabulary& vocab, const std::string& id_prefix,
                                       std::size_t* truncated) {
  if (max_tokens == 0) throw std::invalid_argument("concat_documents: max_tokens must be positive");
  std::vector<Document> docs;
  std::vector<Sentence> pending;
  std::size_t pending_len = 0;
  std::size_t cut = 0;
  auto flush = [&] {
    if (pending.empty()) return;
    docs.push_back(make_document(id_prefix + "-" + std::to_string(docs.size()), pending, vocab));
    pending.clear();
    pending_len = 0;
  };
  for (const auto& s : sentences) {
    if (s.words.empty()) continue;
    Sentence sentence = s;
    if (sentence.words.size() > max_tokens) {
      sentence.words.resize(max_tokens);
      ++cut;
    }
    if (pending_len + sentence.words.size() > max_tokens) flush();
    pending_len += sentence.words.size();
    pending.push_back(std::move(sentence));
  }
  flush();
  if (truncated) *truncated = cut;
  return docs;
}

Document drop_sentences(const Document& doc, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("drop_sentences: p must lie in [0, 1)");
  const auto spans = doc.sentence_spans();
  if (spans.empty()) return doc;
  std::vector<bool> keep(spans.size());
  bool any = false;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    keep[i] = !rng.bernoulli(p);
    any = any || keep[i];
  }
  if (!any) keep[rng.below(spans.size())] = true;
  const auto words = split_words(doc.text);
  const bool has_words = words.size() == doc.tokens.size();
  Document out;
  out.doc_id = doc.doc_id;
  std::vector<std::string> kept_words;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    if (!keep[i]) continue;
    for (std::size_t t = spans[i].first; t < spans[i].second; ++t) {
      out.tokens.push_back(doc.tokens[t]);
      if (has_words) kept_words.push_back(words[t]);
    }
    out.sentence_ends.push_back(out.tokens.size() - 1);
  }
  out.text = join_words(kept_words);
  return out;
}

Bm25Index::Bm25Index(std::span<const Document> pool, Bm25Params params) : params_(params) {
  if (pool.empty()) throw std::invalid_argument("bm25: empty pool");
  double total = 0.0;
  for (std::size_t d = 0; d < pool.size(); ++d) {
    lengths_.push_back(pool[d].tokens.size());
    total += static_cast<double>(pool[d].tokens.size());
    std::map<TokenId, std::size_t> tf;
    for (TokenId t : pool[d].tokens) ++tf[t];
    for (const auto& [term, count] : tf) postings_[term].push_back({d, count});
  }
  avg_length_ = total / static_cast<double>(pool.size());
}

double Bm25Index::idf(TokenId term) const {
  auto it = postings_.find(term);
  const double df = it == postings_.end() ? 0.0 : static_cast<double>(it->second.size());
  const double n = static_cast<double>(lengths_.size());
  return std::max(0.0, std::log((n - df + 0.5) / (df + 0.5)));
}

std::vector<double> Bm25Index::scores(std::span<const TokenId> query) const {
  std::vector<double> out(lengths_.size(), 0.0);
  std::set<TokenId> terms(query.begin(), query.end());
  for (TokenId term : terms) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    const double w = idf(term);
    if (w == 0.0) continue;
    for (const auto& post : it->second) {
      const double tf = static_cast<double>(post.tf);
      const double norm = params_.k1 * (1.0 - params_.b + params_.b * static_cast<double>(lengths_[post.doc]) /
                                                              std::max(avg_length_, 1e-12));
      out[post.doc] += w * tf * (params_.k1 + 1.0) / (tf + norm);
    }
  }
  return out;
}

std::vector<double> bm25_scores(const Document& query, std::span<const Document> pool, Bm25Params params) {
  return Bm25Index(pool, params).scores(query.tokens);
}

json to_json(const Document& doc) {
  return json{{"doc_id", doc.doc_id}, {"text", doc.text}, {"sentence_ends", doc.sentence_ends}};
}

Document document_from_json(const json& j, const Vocabulary& vocab) {
  Document doc;
  doc.doc_id = j.at("doc_id").get<std::string>();
  doc.text = j.at("text").get<std::string>();
  doc.sentence_ends = j.at("sentence_ends").get<std::vector<std::size_t>>();
  doc.tokens = vocab.encode(split_words(doc.text));
  for (std::size_t e : doc.sentence_ends)
    if (e >= doc.tokens.size()) throw std::invalid_argument("document '" + doc.doc_id + "': sentence end out of range");
  return doc;
}

json to_json(const RankingExample& example) {
  json candidates = json::array();
  for (const auto& c : example.candidates) candidates.push_back(to_json(c));
  return json{{"query", to_json(example.query)}, {"candidates", candidates}, {"gold_index", example.gold_index}};
}

RankingExample ranking_example_from_json(const json& j, const Vocabulary& vocab) {
  RankingExample ex;
  ex.query = document_from_json(j.at("query"), vocab);
  for (const auto& c : j.at("candidates")) ex.candidates.push_back(document_from_json(c, vocab));
  ex.gold_index = j.at("gold_index").get<std::size_t>();
  if (ex.gold_index >= ex.candidates.size()) throw std::invalid_argument("ranking example: gold_index out of range");
  return ex;
}

void write_jsonl(const std::string& path, std::span<const RankingExample> examples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset '" + path + "'");
  for (const auto& ex : examples) out << to_json(ex).dump() << '\n';
}

std::vector<RankingExample> read_jsonl(const std::string& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset '" + path + "'");
  std::vector<RankingExample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(ranking_example_from_json(json::parse(line), vocab));
  }
  return out;
}

namespace {

// Indices of the `count` best scores excluding `skip`, ties to lower index.
std::vector<std::size_t> top_excluding(const std::vector<double>& scores, std::size_t skip, std::size_t count) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (i != skip) order.push_back(i);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(std::min(count, order.size()));
  return order;
}

std::vector<std::size_t> random_excluding(std::size_t n, std::size_t skip, std::size_t count, Rng& rng) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < n; ++i)
    if (i != skip) pool.push_back(i);
  rng.shuffle(pool);
  pool.resize(std::min(count, pool.size()));
  return pool;
}

RankingExample assemble(Document query, Document gold, std::vector<Document> negatives, Rng& rng) {
  RankingExample ex;
  ex.query = std::move(query);
  ex.candidates.push_back(std::move(gold));
  for (auto& n : negatives) ex.candidates.push_back(std::move(n));
  std::vector<std::size_t> order(ex.candidates.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::vector<Document> shuffled;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] == 0) ex.gold_index = i;
    shuffled.push_back(std::move(ex.candidates[order[i]]));
  }
  ex.candidates = std::move(shuffled);
  return ex;
}

}  // namespace

std::vector<RankingExample> build_pi_dataset(std::span<const DocumentPair> pairs, Rng& rng,
                                             const DatasetOptions& options) {
  if (options.candidates < 2) throw std::invalid_argument("build_pi_dataset: need at least 2 candidates");
  const std::size_t window = std::min(options.window, pairs.size());
  if (window < options.candidates)
    throw std::invalid_argument("build_pi_dataset: window of " + std::to_string(window) + " documents is smaller than " +
                                std::to_string(options.candidates) + " candidates");
  std::vector<Document> queries, paraphrases;
  for (const auto& pair : pairs) {
    queries.push_back(drop_sentences(pair.document, options.drop_rate, rng));
    paraphrases.push_back(drop_sentences(pair.paraphrase, options.drop_rate, rng));
  }
  std::vector<RankingExample> out;
  const std::size_t n = pairs.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t half = window / 2;
    std::size_t start = i > half ? i - half : 0;
    start = std::min(start, n - window);
    std::vector<Document> pool(paraphrases.begin() + static_cast<std::ptrdiff_t>(start),
                               paraphrases.begin() + static_cast<std::ptrdiff_t>(start + window));
    const std::size_t gold_local = i - start;
    std::vector<std::size_t> picked;
    if (options.use_bm25) {
      picked = top_excluding(Bm25Index(pool).scores(queries[i].tokens), gold_local, options.candidates - 1);
    } else {
      picked = random_excluding(window, gold_local, options.candidates - 1, rng);
    }
    std::vector<Document> negatives;
    for (std::size_t p : picked) negatives.push_back(pool[p]);
    out.push_back(assemble(queries[i], paraphrases[i], std::move(negatives), rng));
  }
  return out;
}

std::vector<RankingExample> build_rr_dataset(std::span<const SectionedArticle> articles, Rng& rng,
                                             const DatasetOptions& options) {
  std::vector<Document> pool;
  std::vector<std::size_t> owner;
  for (std::size_t a = 0; a < articles.size(); ++a)
    for (std::size_t s = 1; s < articles[a].sections.size(); ++s) {
      pool.push_back(articles[a].sections[s]);
      owner.push_back(a);
    }
  std::vector<RankingExample> out;
  for (std::size_t a = 0; a < articles.size(); ++a) {
    const auto& sections = articles[a].sections;
    if (sections.size() < 2) continue;
    std::vector<std::size_t> allowed;
    for (std::size_t p = 0; p < pool.size(); ++p)
      if (owner[p] != a) allowed.push_back(p);
    if (allowed.size() + 1 < options.candidates)
      throw std::invalid_argument("build_rr_dataset: only " + std::to_string(allowed.size()) +
                                  " sections from other articles; need " + std::to_string(options.candidates - 1));
    const Document& gold = sections[1 + rng.below(sections.size() - 1)];
    std::vector<std::size_t> picked;
    if (options.use_bm25) {
      std::vector<Document> candidates_pool;
      for (std::size_t p : allowed) candidates_pool.push_back(pool[p]);
      auto scores = Bm25Index(candidates_pool).scores(sections[0].tokens);
      for (std::size_t p : top_excluding(scores, scores.size(), options.candidates - 1)) picked.push_back(allowed[p]);
    } else {
      for (std::size_t p : random_excluding(allowed.size(), allowed.size(), options.candidates - 1, rng))
        picked.push_back(allowed[p]);
    }
    std::vector<Document> negatives;
    for (std::size_t p : picked) negatives.push_back(pool[p]);
    out.push_back(assemble(sections[0], gold, std::move(negatives), rng));
  }
  return out;
}

std::vector<std::vector<TokenId>> segment_corpus(std::span<const TokenId> tokens, std::size_t seg_len) {
  if (seg_len == 0) throw std::invalid_argument("segment_corpus: seg_len must be positive");
  std::vector<std::vector<TokenId>> segments;
  for (std::size_t i = 0; i < tokens.size(); i += seg_len) {
    const std::size_t end = std::min(tokens.size(), i + seg_len);
    segments.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                          tokens.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return segments;
}

json SyntheticSpec::to_json() const {
  const char* kind_name = kind == Kind::clauses ? "clauses" : kind == Kind::copy ? "copy" : "articles";
  return json{{"kind", kind_name},       {"documents", documents}, {"min_sentences", min_sentences},
              {"max_sentences", max_sentences}, {"nouns", nouns}, {"verbs", verbs},
              {"adjectives", adjectives}, {"sections", sections}, {"seg_len", seg_len},
              {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const json& j) {
  SyntheticSpec spec;
  const std::string kind = j.value("kind", std::string("clauses"));
  if (kind == "clauses") spec.kind = Kind::clauses;
  else if (kind == "copy") spec.kind = Kind::copy;
  else if (kind == "articles") spec.kind = Kind::articles;
  else throw std::invalid_argument("synthetic kind must be clauses, copy or articles");
  spec.documents = j.value("documents", spec.documents);
  spec.min_sentences = j.value("min_sentences", spec.min_sentences);
  spec.max_sentences = j.value("max_sentences", spec.max_sentences);
  spec.nouns = j.value("nouns", spec.nouns);
  spec.verbs = j.value("verbs", spec.verbs);
  spec.adjectives = j.value("adjectives", spec.adjectives);
  spec.sections = j.value("sections", spec.sections);
  spec.seg_len = j.value("seg_len", spec.seg_len);
  spec.seed = j.value("seed", spec.seed);
  return spec;
}

namespace {

const char* const kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
const char* const kVowels[] = {"a", "e", "i", "o", "u"};

// Pseudo-word number `i` with a category suffix; distinct for distinct i.
std::string pseudo_word(std::size_t i, const std::string& suffix) {
  constexpr std::size_t syllables = std::size(kOnsets) * std::size(kVowels);
  std::string w;
  std::size_t x = i;
  // At least two syllables: base-70 digits, least significant first.
  for (int digit = 0; digit < 2 || x > 0; ++digit) {
    const std::size_t s = x % syllables;
    w += kOnsets[s / std::size(kVowels)];
    w += kVowels[s % std::size(kVowels)];
    x /= syllables;
  }
  return w + suffix;
}

template <typename T>
const T& pick(const std::vector<T>& items, Rng& rng) {
  return items[rng.below(items.size())];
}

struct Topic {
  std::vector<std::string> nouns, verbs;
};

void emit_clause(std::vector<std::string>& out, const Lexicon& lex, Rng& rng, const Topic* topic) {
  auto noun = [&] { return topic && rng.bernoulli(0.7) ? pick(topic->nouns, rng) : pick(lex.nouns, rng); };
  auto verb = [&] { return topic && rng.bernoulli(0.7) ? pick(topic->verbs, rng) : pick(lex.verbs, rng); };
  out.push_back(pick(lex.determiners, rng));
  if (rng.bernoulli(0.5)) out.push_back(pick(lex.adjectives, rng));
  out.push_back(noun());
  out.push_back(verb());
  out.push_back(pick(lex.determiners, rng));
  if (rng.bernoulli(0.3)) out.push_back(pick(lex.adjectives, rng));
  out.push_back(noun());
  if (rng.bernoulli(0.4)) {
    out.push_back(pick(lex.prepositions, rng));
    out.push_back(pick(lex.determiners, rng));
    out.push_back(noun());
  }
}

Sentence make_sentence(const Lexicon& lex, Rng& rng, const Topic* topic) {
  Sentence s;
  emit_clause(s.words, lex, rng, topic);
  const std::size_t extra = rng.below(3);
  for (std::size_t c = 0; c < extra; ++c) {
    s.words.push_back(",");
    s.words.push_back(pick(lex.conjunctions, rng));
    emit_clause(s.words, lex, rng, topic);
  }
  s.words.push_back(".");
  return s;
}

// Exactly `count` words of grammatical text (the last sentence may be cut).
std::vector<std::string> fresh_words(std::size_t count, const Lexicon& lex, Rng& rng) {
  std::vector<std::string> words;
  while (words.size() < count) {
    auto s = make_sentence(lex, rng, nullptr);
    words.insert(words.end(), s.words.begin(), s.words.end());
  }
  words.resize(count);
  return words;
}

}  // namespace

Lexicon Lexicon::make(const SyntheticSpec& spec) {
  Lexicon lex;
  std::size_t counter = 0;
  auto fill = [&](std::vector<std::string>& dst, std::size_t n, const std::string& suffix) {
    for (std::size_t i = 0; i < n; ++i) {
      std::string base = pseudo_word(counter++, suffix);
      std::string syn = pseudo_word(counter++, suffix);
      dst.push_back(base);
      lex.synonyms[base] = syn;
      lex.synonyms[syn] = base;
    }
  };
  fill(lex.nouns, spec.nouns, "o");
  fill(lex.verbs, spec.verbs, "es");
  fill(lex.adjectives, spec.adjectives, "y");
  lex.determiners = {"the", "a", "this", "every"};
  lex.prepositions = {"in", "on", "with", "near", "under"};
  lex.conjunctions = {"and", "but", "while", "so"};
  return lex;
}

std::vector<std::string> Lexicon::all_words() const {
  std::vector<std::string> words;
  for (const auto* group : {&nouns, &verbs, &adjectives})
    for (const auto& w : *group) {
      words.push_back(w);
      words.push_back(synonyms.at(w));
    }
  for (const auto* group : {&determiners, &prepositions, &conjunctions})
    words.insert(words.end(), group->begin(), group->end());
  words.push_back(",");
  words.push_back(".");
  return words;
}

std::vector<Article> gen_synthetic_corpus(const SyntheticSpec& spec, Rng& rng) {
  if (spec.min_sentences == 0 || spec.max_sentences < spec.min_sentences)
    throw std::invalid_argument("synthetic spec: need 1 <= min_sentences <= max_sentences");
  const Lexicon lex = Lexicon::make(spec);
  std::vector<Article> corpus;
  switch (spec.kind) {
    case SyntheticSpec::Kind::clauses: {
      for (std::size_t a = 0; a < spec.documents; ++a) {
        Article article;
        const std::size_t n = spec.min_sentences + rng.below(spec.max_sentences - spec.min_sentences + 1);
        for (std::size_t s = 0; s < n; ++s) article.push_back(make_sentence(lex, rng, nullptr));
        corpus.push_back(std::move(article));
      }
      break;
    }
    case SyntheticSpec::Kind::articles: {
      for (std::size_t a = 0; a < spec.documents; ++a) {
        Topic topic;
        for (int i = 0; i < 8; ++i) topic.nouns.push_back(pick(lex.nouns, rng));
        for (int i = 0; i < 4; ++i) topic.verbs.push_back(pick(lex.verbs, rng));
        Article article;
        const std::size_t per_section = spec.min_sentences;
        for (std::size_t s = 0; s < spec.sections * per_section; ++s)
          article.push_back(make_sentence(lex, rng, &topic));
        corpus.push_back(std::move(article));
      }
      break;
    }
    case SyntheticSpec::Kind::copy: {
      // Segment t is fresh text followed by a verbatim copy of the fresh half
      // of segment t-1; one segment per line.
      if (spec.seg_len < 2) throw std::invalid_argument("synthetic copy corpus: seg_len must be at least 2");
      const std::size_t half = spec.seg_len / 2;
      Article stream;
      std::vector<std::string> previous = fresh_words(spec.seg_len - half, lex, rng);
      for (std::size_t t = 0; t < spec.documents; ++t) {
        std::vector<std::string> fresh = fresh_words(half, lex, rng);
        Sentence line;
        line.words = fresh;
        line.words.insert(line.words.end(), previous.begin(), previous.begin() + static_cast<std::ptrdiff_t>(
                                                                                      spec.seg_len - half));
        stream.push_back(std::move(line));
        fresh.resize(spec.seg_len - half, ".");
        previous = std::move(fresh);
      }
      corpus.push_back(std::move(stream));
      break;
    }
  }
  return corpus;
}

Sentence paraphrase_sentence(const Sentence& sentence, const Lexicon& lexicon, Rng& rng, double swap_rate) {
  Sentence out;
  for (const auto& w : sentence.words) {
    auto it = lexicon.synonyms.find(w);
    out.words.push_back(it != lexicon.synonyms.end() && rng.bernoulli(swap_rate) ? it->second : w);
  }
  // "A , conj B ." -> "B , conj A ." for the first conjunction.
  for (std::size_t i = 0; i + 1 < out.words.size(); ++i) {
    if (out.words[i] != ",") continue;
    const auto& c = lexicon.conjunctions;
    if (std::find(c.begin(), c.end(), out.words[i + 1]) == c.end()) continue;
    std::size_t end = i + 2;
    while (end < out.words.size() && out.words[end] != "," && out.words[end] != ".") ++end;
    std::vector<std::string> first(out.words.begin(), out.words.begin() + static_cast<std::ptrdiff_t>(i));
    std::vector<std::string> second(out.words.begin() + static_cast<std::ptrdiff_t>(i + 2),
                                    out.words.begin() + static_cast<std::ptrdiff_t>(end));
    std::vector<std::string> swapped = second;
    swapped.push_back(",");
    swapped.push_back(out.words[i + 1]);
    swapped.insert(swapped.end(), first.begin(), first.end());
    swapped.insert(swapped.end(), out.words.begin() + static_cast<std::ptrdiff_t>(end), out.words.end());
    out.words = std::move(swapped);
    break;
  }
  return out;
}

Sentence transduce_sentence(const Sentence& sentence, const Lexicon& lexicon) {
  Sentence out;
  for (const auto& w : sentence.words) {
    auto it = lexicon.synonyms.find(w);
    out.words.push_back(it != lexicon.synonyms.end() ? it->second : w);
  }
  std::size_t body = out.words.size();
  if (body > 0 && out.words.back() == ".") --body;
  for (std::size_t i = 0; i + 1 < body; i += 2) std::swap(out.words[i], out.words[i + 1]);
  return out;
}

std::vector<DocumentPair> make_document_pairs(std::span<const Article> articles, const Lexicon& lexicon,
                                              const Vocabulary& vocab, std::size_t max_tokens, Rng& rng) {
  std::vector<DocumentPair> pairs;
  for (const auto& article : articles) {
    std::vector<Sentence> left, right;
    std::size_t left_len = 0, right_len = 0;
    auto flush = [&] {
      if (left.empty()) return;
      const std::string id = "pair-" + std::to_string(pairs.size());
      pairs.push_back({make_document(id + "-doc", left, vocab), make_document(id + "-para", right, vocab)});
      left.clear();
      right.clear();
      left_len = right_len = 0;
    };
    for (const auto& s : article) {
      Sentence para = paraphrase_sentence(s, lexicon, rng);
      if (!left.empty() && (left_len + s.words.size() > max_tokens || right_len + para.words.size() > max_tokens))
        flush();
      left_len += s.words.size();
      right_len += para.words.size();
      left.push_back(s);
      right.push_back(std::move(para));
    }
    flush();
  }
  return pairs;
}

std::vector<SectionedArticle> sectionize(std::span<const Article> articles, const Vocabulary& vocab,
                                         std::size_t sentences_per_section) {
  if (sentences_per_section == 0) throw std::invalid_argument("sectionize: sentences_per_section must be positive");
  std::vector<SectionedArticle> out;
  for (std::size_t a = 0; a < articles.size(); ++a) {
    SectionedArticle sa;
    sa.article_id = "article-" + std::to_string(a);
    for (std::size_t s = 0; s < articles[a].size(); s += sentences_per_section) {
      const std::size_t end = std::min(articles[a].size(), s + sentences_per_section);
      std::span<const Sentence> part(articles[a].data() + s, end - s);
      sa.sections.push_back(make_document(sa.article_id + "-s" + std::to_string(sa.sections.size()), part, vocab));
    }
    out.push_back(std::move(sa));
  }
  return out;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[value & 0xF];
    value >>= 4;
  }
  return out;
}

}  // namespace nugget
