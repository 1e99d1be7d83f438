#include "corella/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace corella {

namespace {

using nlohmann::json;

std::uint64_t fnv1a(const std::string& s, std::uint64_t h) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

std::vector<std::string> split_on(const std::string& line, const std::string& sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = line.find(sep, pos);
    if (next == std::string::npos) {
      out.push_back(line.substr(pos));
      break;
    }
    out.push_back(line.substr(pos, next - pos));
    pos = next + sep.size();
  }
  return out;
}

int parse_int(const std::string& s, const std::filesystem::path& file, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw DataError("malformed line " + std::to_string(line_no) + " in " + file.string() +
                    ": bad integer '" + s + "'");
  }
}

std::int64_t parse_i64(const std::string& s, const std::filesystem::path& file,
                       std::size_t line_no) {
  try {
    std::size_t used = 0;
    const std::int64_t v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw DataError("malformed line " + std::to_string(line_no) + " in " + file.string() +
                    ": bad integer '" + s + "'");
  }
}

std::ifstream open_or_throw(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("missing or unreadable file: " + file.string());
  return in;
}

// All (field, value) pairs of an interaction in canonical field order.
std::vector<std::pair<std::string, std::string>> field_values(const Interaction& it) {
  std::vector<std::pair<std::string, std::string>> out;
  out.reserve(2 + it.user_attrs.size() + it.item_attrs.size());
  out.emplace_back("user_id", it.user_id);
  out.emplace_back("item_id", it.item_id);
  for (const auto& kv : it.user_attrs) out.push_back(kv);
  for (const auto& kv : it.item_attrs) out.push_back(kv);
  return out;
}

}  // namespace

// ---- FieldVocab ---------------------------------------------------------------

FieldVocab FieldVocab::build(std::span<const Interaction> train) {
  FieldVocab v;
  std::unordered_map<std::string, std::size_t> field_index;
  for (const Interaction& it : train) {
    for (const auto& [name, value] : field_values(it)) {
      auto fit = field_index.find(name);
      std::size_t fi;
      if (fit == field_index.end()) {
        fi = v.field_names_.size();
        field_index.emplace(name, fi);
        v.field_names_.push_back(name);
        v.maps_.emplace_back();
      } else {
        fi = fit->second;
      }
      auto& m = v.maps_[fi];
      if (m.find(value) == m.end()) {
        m.emplace(value, static_cast<int>(m.size()) + 1);  // 0 reserved for OOV
      }
    }
  }
  return v;
}

std::vector<int> FieldVocab::cardinalities() const {
  std::vector<int> out;
  out.reserve(maps_.size());
  for (std::size_t i = 0; i < maps_.size(); ++i) out.push_back(cardinality(static_cast<int>(i)));
  return out;
}

int FieldVocab::lookup(int field, const std::string& value) const {
  const auto& m = maps_.at(static_cast<std::size_t>(field));
  const auto it = m.find(value);
  return it == m.end() ? 0 : it->second;
}

std::vector<int> FieldVocab::encode(const Interaction& it) const {
  const auto pairs = field_values(it);
  std::vector<int> out(field_names_.size(), 0);
  for (std::size_t f = 0; f < field_names_.size(); ++f) {
    for (const auto& [name, value] : pairs) {
      if (name == field_names_[f]) {
        out[f] = lookup(static_cast<int>(f), value);
        break;
      }
    }
  }
  return out;
}

std::uint64_t FieldVocab::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t f = 0; f < field_names_.size(); ++f) {
    h = fnv1a(field_names_[f] + "\x1f", h);
    for (const auto& [value, index] : maps_[f]) {
      h = fnv1a(value + "\x1f" + std::to_string(index) + "\n", h);
    }
  }
  return h;
}

void FieldVocab::add_field(std::string name, std::map<std::string, int> values) {
  field_names_.push_back(std::move(name));
  maps_.push_back(std::move(values));
}

// ---- TextTokenizer --------------------------------------------------------------

TextTokenizer::TextTokenizer(int max_sequence_length)
    : max_sequence_length_(max_sequence_length) {
  for (const char* t : {"<pad>", "<unk>", "Yes", "No", "NONE"}) add_token(t);
}

void TextTokenizer::add_token(const std::string& tok) {
  if (token_to_id_.count(tok)) return;
  token_to_id_.emplace(tok, static_cast<int>(id_to_token_.size()));
  id_to_token_.push_back(tok);
  const int words = 1 + static_cast<int>(std::count(tok.begin(), tok.end(), ' '));
  max_phrase_words_ = std::max(max_phrase_words_, words);
}

int TextTokenizer::id_of(const std::string& tok) const {
  const auto it = token_to_id_.find(tok);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& TextTokenizer::token_of(int id) const {
  return id_to_token_.at(static_cast<std::size_t>(id));
}

std::vector<int> TextTokenizer::tokenize(const std::string& text) const {
  std::vector<std::string> words;
  std::istringstream ss(text);
  for (std::string w; ss >> w;) words.push_back(w);

  // Greedy longest match so multi-word atomic entries (titles) win.
  std::vector<int> ids;
  std::size_t i = 0;
  while (i < words.size()) {
    int matched_len = 0;
    int matched_id = kUnk;
    std::string candidate;
    for (int len = 1; len <= max_phrase_words_ && i + len <= words.size(); ++len) {
      if (len == 1) {
        candidate = words[i];
      } else {
        candidate += ' ';
        candidate += words[i + static_cast<std::size_t>(len) - 1];
      }
      const auto it = token_to_id_.find(candidate);
      if (it != token_to_id_.end()) {
        matched_len = len;
        matched_id = it->second;
      }
    }
    if (matched_len == 0) {
      ids.push_back(kUnk);
      i += 1;
    } else {
      ids.push_back(matched_id);
      i += static_cast<std::size_t>(matched_len);
    }
  }
  return ids;
}

std::string TextTokenizer::detokenize(std::span<const int> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token_of(ids[i]);
  }
  return out;
}

std::uint64_t TextTokenizer::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  h = fnv1a(std::to_string(max_sequence_length_) + "\x1f", h);
  for (const std::string& t : id_to_token_) h = fnv1a(t + "\n", h);
  return h;
}

// ---- loaders ---------------------------------------------------------------------

LoadResult load_movielens(const std::filesystem::path& dir) {
  struct UserRec {
    std::vector<std::pair<std::string, std::string>> attrs;
  };
  struct MovieRec {
    std::string title;
    std::string genres;
  };

  std::unordered_map<std::string, UserRec> users;
  {
    auto in = open_or_throw(dir / "users.dat");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const auto f = split_on(line, "::");
      if (f.size() != 5) {
        throw DataError("malformed line " + std::to_string(line_no) + " in " +
                        (dir / "users.dat").string() + ": expected 5 fields, got " +
                        std::to_string(f.size()));
      }
      users[f[0]] = UserRec{{{"gender", f[1]}, {"age", f[2]}, {"occupation", f[3]}, {"zip", f[4]}}};
    }
  }

  std::unordered_map<std::string, MovieRec> movies;
  {
    auto in = open_or_throw(dir / "movies.dat");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const auto f = split_on(line, "::");
      if (f.size() != 3) {
        throw DataError("malformed line " + std::to_string(line_no) + " in " +
                        (dir / "movies.dat").string() + ": expected 3 fields, got " +
                        std::to_string(f.size()));
      }
      movies[f[0]] = MovieRec{f[1], f[2]};
    }
  }

  LoadResult result;
  {
    const auto path = dir / "ratings.dat";
    auto in = open_or_throw(path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const auto f = split_on(line, "::");
      if (f.size() != 4) {
        throw DataError("malformed line " + std::to_string(line_no) + " in " + path.string() +
                        ": expected 4 fields, got " + std::to_string(f.size()));
      }
      const auto uit = users.find(f[0]);
      const auto mit = movies.find(f[1]);
      if (uit == users.end() || mit == movies.end()) {
        ++result.dropped_joins;
        continue;
      }
      Interaction it;
      it.user_id = f[0];
      it.item_id = f[1];
      it.user_attrs = uit->second.attrs;
      it.item_attrs = {{"genres", mit->second.genres}};
      it.item_title = mit->second.title;
      it.rating = parse_int(f[2], path, line_no);
      it.timestamp = parse_i64(f[3], path, line_no);
      it.label = (it.rating == 4 || it.rating == 5) ? 1 : 0;
      result.interactions.push_back(std::move(it));
    }
  }
  return result;
}

LoadResult load_amazon_books(const std::filesystem::path& csv) {
  LoadResult result;
  auto in = open_or_throw(csv);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto f = split_on(line, ",");
    if (f.size() != 4) {
      throw DataError("malformed line " + std::to_string(line_no) + " in " + csv.string() +
                      ": expected 4 fields, got " + std::to_string(f.size()));
    }
    double rating = 0.0;
    try {
      rating = std::stod(f[2]);
    } catch (const std::exception&) {
      throw DataError("malformed line " + std::to_string(line_no) + " in " + csv.string() +
                      ": bad rating '" + f[2] + "'");
    }
    Interaction it;
    it.item_id = f[0];
    it.user_id = f[1];
    it.item_title = f[0];
    it.rating = static_cast<int>(std::lround(rating));
    it.timestamp = parse_i64(f[3], csv, line_no);
    it.label = it.rating == 5 ? 1 : 0;
    result.interactions.push_back(std::move(it));
  }
  return result;
}

DatasetSplit chronological_split(std::vector<Interaction> interactions) {
  const std::size_t n = interactions.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return interactions[a].timestamp < interactions[b].timestamp;
  });

  const std::size_t train_end = static_cast<std::size_t>(std::floor(0.8 * static_cast<double>(n)));
  const std::size_t valid_end = static_cast<std::size_t>(std::floor(0.9 * static_cast<double>(n)));

  DatasetSplit split;
  split.train.reserve(train_end);
  split.valid.reserve(valid_end - train_end);
  split.test.reserve(n - valid_end);
  for (std::size_t i = 0; i < n; ++i) {
    Interaction& it = interactions[order[i]];
    if (i < train_end) {
      split.train.push_back(std::move(it));
    } else if (i < valid_end) {
      split.valid.push_back(std::move(it));
    } else {
      split.test.push_back(std::move(it));
    }
  }
  return split;
}

// ---- prompt rendering ----------------------------------------------------------------

namespace {

const std::vector<std::string> kPromptPrefix = {"Below", "is",   "the", "rating",
                                                "history", "of", "a",   "user:"};
const std::vector<std::string> kPromptMid = {".",   "Please", "predict", "whether",
                                             "the", "user",   "will",    "like"};
const std::vector<std::string> kPromptTail = {
    "based", "on",     "his/her", "rating", "history", "and",    "the",
    "quality", "of",   "the",     "target", "item.",   "You",    "should",
    "ONLY",  "answer", "no",      "or",     "yes.",    "Answer:"};

void append_history(std::vector<std::string>& out, std::span<const HistoryItem> hist) {
  if (hist.empty()) {
    out.push_back("NONE");
    return;
  }
  for (std::size_t i = 0; i < hist.size(); ++i) {
    out.push_back(hist[i].title);
    const bool last = i + 1 == hist.size();
    out.push_back("(" + std::to_string(hist[i].rating) + (last ? ")" : ");"));
  }
}

}  // namespace

std::vector<std::string> render_prompt(std::span<const HistoryItem> history,
                                       const Interaction& target, const TransformOptions& opts) {
  const std::size_t keep0 =
      std::min<std::size_t>(history.size(), static_cast<std::size_t>(std::max(opts.history_k, 0)));
  // ratings history is quoted most-recent K, oldest first
  std::span<const HistoryItem> recent = history.subspan(history.size() - keep0, keep0);

  const std::size_t fixed = kPromptPrefix.size() + kPromptMid.size() + kPromptTail.size() +
                            (target.is_cue ? 2 : 1);
  for (std::size_t keep = keep0;; --keep) {
    const std::size_t hist_tokens = keep == 0 ? 1 : 2 * keep;
    if (fixed + hist_tokens <= static_cast<std::size_t>(opts.max_seq_len)) {
      std::vector<std::string> out;
      out.reserve(fixed + hist_tokens);
      out.insert(out.end(), kPromptPrefix.begin(), kPromptPrefix.end());
      append_history(out, recent.subspan(keep0 - keep, keep));
      out.insert(out.end(), kPromptMid.begin(), kPromptMid.end());
      if (target.is_cue) out.push_back("CUE");
      out.push_back(target.item_title);
      out.insert(out.end(), kPromptTail.begin(), kPromptTail.end());
      return out;
    }
    if (keep == 0) {
      throw DataError("max_seq_len " + std::to_string(opts.max_seq_len) +
                      " cannot fit the instruction template (needs " +
                      std::to_string(fixed + 1) + " tokens)");
    }
  }
}

DualModalitySample transform_modalities(const Interaction& it, int sample_id,
                                        std::span<const HistoryItem> history,
                                        const FieldVocab& vocab, const TextTokenizer& tok,
                                        const TransformOptions& opts) {
  DualModalitySample s;
  s.sample_id = sample_id;
  s.id_input = vocab.encode(it);
  const auto words = render_prompt(history, it, opts);
  s.text_tokens.reserve(words.size());
  for (const std::string& w : words) s.text_tokens.push_back(tok.id_of(w));
  s.label = it.label;
  s.label_token = it.label == 1 ? TextTokenizer::kYes : TextTokenizer::kNo;
  s.is_cue = it.is_cue;
  return s;
}

// ---- pipeline ----------------------------------------------------------------------

ProcessedDataset build_dataset(const DatasetSplit& split, const TransformOptions& opts) {
  ProcessedDataset ds;
  ds.vocab = FieldVocab::build(split.train);
  ds.tokenizer = TextTokenizer(opts.max_seq_len);
  for (const auto& part : {kPromptPrefix, kPromptMid, kPromptTail}) {
    for (const std::string& w : part) ds.tokenizer.add_token(w);
  }
  for (int r = 1; r <= 5; ++r) {
    ds.tokenizer.add_token("(" + std::to_string(r) + ")");
    ds.tokenizer.add_token("(" + std::to_string(r) + ");");
  }
  ds.tokenizer.add_token("CUE");

  const std::vector<const std::vector<Interaction>*> parts = {&split.train, &split.valid,
                                                              &split.test};
  const std::size_t train_size = split.train.size();

  // Pass 1: token vocabulary from train-split prompts only.
  {
    std::unordered_map<std::string, std::vector<const Interaction*>> hist;
    std::size_t gid = 0;
    for (const auto* part : parts) {
      for (const Interaction& it : *part) {
        if (gid < train_size) {
          std::vector<HistoryItem> h;
          const auto& prior = hist[it.user_id];
          for (auto rit = prior.rbegin(); rit != prior.rend(); ++rit) {
            if ((*rit)->timestamp >= it.timestamp) continue;  // ties are not history
            h.push_back({(*rit)->item_title, (*rit)->rating});
            if (h.size() == static_cast<std::size_t>(opts.history_k)) break;
          }
          std::reverse(h.begin(), h.end());
          for (const std::string& w : render_prompt(h, it, opts)) ds.tokenizer.add_token(w);
        }
        hist[it.user_id].push_back(&it);
        ++gid;
      }
    }
  }

  // Pass 2: materialize samples for every split.
  bool any_cue = false;
  {
    std::unordered_map<std::string, std::vector<const Interaction*>> hist;
    std::size_t gid = 0;
    std::vector<std::vector<DualModalitySample>*> outs = {&ds.train, &ds.valid, &ds.test};
    for (std::size_t p = 0; p < parts.size(); ++p) {
      outs[p]->reserve(parts[p]->size());
      for (const Interaction& it : *parts[p]) {
        std::vector<HistoryItem> h;
        const auto& prior = hist[it.user_id];
        for (auto rit = prior.rbegin(); rit != prior.rend(); ++rit) {
          if ((*rit)->timestamp >= it.timestamp) continue;
          h.push_back({(*rit)->item_title, (*rit)->rating});
          if (h.size() == static_cast<std::size_t>(opts.history_k)) break;
        }
        std::reverse(h.begin(), h.end());
        outs[p]->push_back(
            transform_modalities(it, static_cast<int>(gid), h, ds.vocab, ds.tokenizer, opts));
        any_cue = any_cue || it.is_cue;
        hist[it.user_id].push_back(&it);
        ++gid;
      }
    }
  }
  if (!any_cue) {
    for (auto* part : {&ds.train, &ds.valid, &ds.test}) {
      for (DualModalitySample& s : *part) s.is_cue.reset();
    }
  }
  return ds;
}

// ---- synthetic benchmark ---------------------------------------------------------------

std::vector<Interaction> generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.cue_fraction < 0.0 || cfg.cue_fraction > 1.0) {
    throw DataError("cue_fraction must lie in [0,1], got " + std::to_string(cfg.cue_fraction));
  }
  if (cfg.noise < 0.0 || cfg.noise > 1.0) {
    throw DataError("noise must lie in [0,1], got " + std::to_string(cfg.noise));
  }
  if (cfg.n <= 0 || cfg.num_users <= 0 || cfg.num_items <= 0 || cfg.num_genres <= 0 ||
      cfg.num_segments <= 0) {
    throw DataError("synthetic config requires positive sizes");
  }

  Rng rng(cfg.seed);

  // Items below the ambiguity cutoff carry no usable ID signal: half of their
  // interactions are cue-flipped, so the label given the ID fields is a coin.
  int ambiguous = 0;
  double cue_given_ambiguous = 0.0;
  if (cfg.cue_fraction > 0.0) {
    ambiguous = static_cast<int>(
        std::lround(std::min(1.0, 2.0 * cfg.cue_fraction) * cfg.num_items));
    ambiguous = std::max(ambiguous, 1);
    cue_given_ambiguous =
        std::min(1.0, cfg.cue_fraction * cfg.num_items / static_cast<double>(ambiguous));
  }

  std::vector<double> w_item(cfg.num_items);
  std::vector<int> genre_of(cfg.num_items);
  for (int i = 0; i < cfg.num_items; ++i) {
    if (i < ambiguous) {
      w_item[i] = 3.0;
    } else {
      const double mag = rng.uniform(1.5, 3.0);
      w_item[i] = rng.uniform() < 0.5 ? mag : -mag;
    }
    genre_of[i] = rng.index(static_cast<std::size_t>(cfg.num_genres));
  }
  std::vector<double> w_genre(cfg.num_genres);
  for (double& w : w_genre) w = rng.normal(0.0, 0.25);
  std::vector<int> seg_of(cfg.num_users);
  for (int& s : seg_of) s = rng.index(static_cast<std::size_t>(cfg.num_segments));
  std::vector<double> w_seg(cfg.num_segments);
  for (double& w : w_seg) w = rng.normal(0.0, 0.25);

  std::vector<Interaction> out;
  out.reserve(static_cast<std::size_t>(cfg.n));
  for (int i = 0; i < cfg.n; ++i) {
    const int user = rng.index(static_cast<std::size_t>(cfg.num_users));
    const int item = rng.index(static_cast<std::size_t>(cfg.num_items));
    const double z = w_item[item] + w_genre[genre_of[item]] + w_seg[seg_of[user]];
    const bool base = z > 0.0;
    const bool cue = item < ambiguous && rng.uniform() < cue_given_ambiguous;
    bool label = base != cue;  // cue flips the base label
    if (rng.uniform() < cfg.noise) label = !label;

    Interaction it;
    it.user_id = "u" + std::to_string(user);
    it.item_id = "i" + std::to_string(item);
    it.user_attrs = {{"segment", "s" + std::to_string(seg_of[user])}};
    it.item_attrs = {{"genre", "g" + std::to_string(genre_of[item])}};
    it.item_title = "Item_" + std::to_string(item);
    it.label = label ? 1 : 0;
    it.rating = label ? 5 : 1;
    it.timestamp = i;
    it.is_cue = cue;
    out.push_back(std::move(it));
  }
  return out;
}

DatasetSplit synthetic_split(const SyntheticConfig& cfg) {
  return chronological_split(generate_synthetic(cfg));
}

// ---- canonical processed files ------------------------------------------------------------

namespace {

json sample_to_json(const DualModalitySample& s) {
  json j;
  j["sample_id"] = s.sample_id;
  j["id_input"] = s.id_input;
  j["text_tokens"] = s.text_tokens;
  j["label"] = s.label;
  j["label_token"] = s.label_token == TextTokenizer::kYes ? "Yes" : "No";
  if (s.is_cue.has_value()) j["is_cue"] = *s.is_cue;
  return j;
}

DualModalitySample sample_from_json(const json& j) {
  DualModalitySample s;
  s.sample_id = j.at("sample_id").get<int>();
  s.id_input = j.at("id_input").get<std::vector<int>>();
  s.text_tokens = j.at("text_tokens").get<std::vector<int>>();
  s.label = j.at("label").get<int>();
  const std::string tok = j.at("label_token").get<std::string>();
  if (tok != "Yes" && tok != "No") throw DataError("bad label_token '" + tok + "'");
  s.label_token = tok == "Yes" ? TextTokenizer::kYes : TextTokenizer::kNo;
  if (j.contains("is_cue")) s.is_cue = j.at("is_cue").get<bool>();
  return s;
}

void write_split(const std::filesystem::path& file, const std::string& name,
                 const std::vector<DualModalitySample>& samples, std::uint64_t vocab_hash,
                 std::uint64_t tok_hash) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write " + file.string());
  json header;
  header["format_version"] = 1;
  header["kind"] = "corella-processed";
  header["split"] = name;
  header["n"] = samples.size();
  header["vocab_hash"] = hex64(vocab_hash);
  header["tokenizer_hash"] = hex64(tok_hash);
  out << header.dump() << "\n";
  for (const auto& s : samples) out << sample_to_json(s).dump() << "\n";
}

std::vector<DualModalitySample> read_split(const std::filesystem::path& file,
                                           std::uint64_t vocab_hash, std::uint64_t tok_hash) {
  auto in = open_or_throw(file);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty processed file " + file.string());
  const json header = json::parse(line);
  if (header.value("format_version", -1) != 1 || header.value("kind", "") != "corella-processed") {
    throw DataError("unrecognized processed-file header in " + file.string());
  }
  if (header.at("vocab_hash").get<std::string>() != hex64(vocab_hash) ||
      header.at("tokenizer_hash").get<std::string>() != hex64(tok_hash)) {
    throw DataError("processed file " + file.string() +
                    " does not match the vocab/tokenizer it was written with");
  }
  std::vector<DualModalitySample> samples;
  const std::size_t expected = header.at("n").get<std::size_t>();
  samples.reserve(expected);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    samples.push_back(sample_from_json(json::parse(line)));
  }
  if (samples.size() != expected) {
    throw DataError("processed file " + file.string() + " truncated: expected " +
                    std::to_string(expected) + " records, got " + std::to_string(samples.size()));
  }
  return samples;
}

}  // namespace

void write_processed(const ProcessedDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    json jv;
    jv["fields"] = json::array();
    for (int f = 0; f < ds.vocab.field_count(); ++f) {
      json field;
      field["name"] = ds.vocab.field_names()[f];
      json values = json::object();
      for (const auto& [value, index] : ds.vocab.values(f)) values[value] = index;
      field["values"] = values;
      jv["fields"].push_back(field);
    }
    std::ofstream out(dir / "vocab.json", std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / "vocab.json").string());
    out << jv.dump(2) << "\n";
  }
  {
    json jt;
    jt["max_sequence_length"] = ds.tokenizer.max_sequence_length();
    jt["tokens"] = ds.tokenizer.tokens();
    std::ofstream out(dir / "tokenizer.json", std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / "tokenizer.json").string());
    out << jt.dump(2) << "\n";
  }
  const std::uint64_t vh = ds.vocab.hash();
  const std::uint64_t th = ds.tokenizer.hash();
  write_split(dir / "train.jsonl", "train", ds.train, vh, th);
  write_split(dir / "valid.jsonl", "valid", ds.valid, vh, th);
  write_split(dir / "test.jsonl", "test", ds.test, vh, th);
}

ProcessedDataset read_processed(const std::filesystem::path& dir) {
  ProcessedDataset ds;
  {
    auto in = open_or_throw(dir / "vocab.json");
    const json jv = json::parse(in);
    for (const json& field : jv.at("fields")) {
      std::map<std::string, int> values;
      for (const auto& [value, index] : field.at("values").items()) {
        values.emplace(value, index.get<int>());
      }
      ds.vocab.add_field(field.at("name").get<std::string>(), std::move(values));
    }
  }
  {
    auto in = open_or_throw(dir / "tokenizer.json");
    const json jt = json::parse(in);
    ds.tokenizer = TextTokenizer(jt.at("max_sequence_length").get<int>());
    for (const json& t : jt.at("tokens")) ds.tokenizer.add_token(t.get<std::string>());
  }
  const std::uint64_t vh = ds.vocab.hash();
  const std::uint64_t th = ds.tokenizer.hash();
  ds.train = read_split(dir / "train.jsonl", vh, th);
  ds.valid = read_split(dir / "valid.jsonl", vh, th);
  ds.test = read_split(dir / "test.jsonl", vh, th);
  return ds;
}

}  // namespace corella
