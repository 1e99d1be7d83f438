#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "corella/rng.hpp"

namespace corella {

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// One user-item event.
struct Interaction {
  std::string user_id;
  std::string item_id;
  std::vector<std::pair<std::string, std::string>> user_attrs;  // (field, value)
  std::vector<std::pair<std::string, std::string>> item_attrs;
  std::string item_title;
  int rating = 0;  // 1..5
  std::int64_t timestamp = 0;
  int label = 0;  // 0/1
  bool is_cue = false;  // synthetic benchmark ground truth; false elsewhere
};

struct DatasetSplit {
  std::vector<Interaction> train;
  std::vector<Interaction> valid;
  std::vector<Interaction> test;
};

// Per-field categorical vocabulary. Index 0 is reserved for out-of-vocabulary
// values; built from the train split only.
class FieldVocab {
 public:
  FieldVocab() = default;
  static FieldVocab build(std::span<const Interaction> train);

  int field_count() const { return static_cast<int>(field_names_.size()); }
  const std::vector<std::string>& field_names() const { return field_names_; }
  int cardinality(int field) const { return static_cast<int>(maps_[field].size()) + 1; }
  std::vector<int> cardinalities() const;
  int lookup(int field, const std::string& value) const;
  std::vector<int> encode(const Interaction& it) const;
  std::uint64_t hash() const;

  const std::map<std::string, int>& values(int field) const { return maps_[field]; }
  void add_field(std::string name, std::map<std::string, int> values);

 private:
  std::vector<std::string> field_names_;
  std::vector<std::map<std::string, int>> maps_;  // value -> index >= 1
};

// Word/phrase-level tokenizer. Item titles and attribute values are atomic
// entries even when they contain spaces; tokenize() resolves them by greedy
// longest match. Reserved ids: PAD, UNK, the answer tokens "Yes"/"No", and
// the empty-history marker NONE.
class TextTokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kYes = 2;
  static constexpr int kNo = 3;
  static constexpr int kNone = 4;

  TextTokenizer() = default;
  explicit TextTokenizer(int max_sequence_length);

  void add_token(const std::string& tok);  // no-op if present
  int id_of(const std::string& tok) const;  // kUnk if absent
  const std::string& token_of(int id) const;
  int vocab_size() const { return static_cast<int>(id_to_token_.size()); }
  int max_sequence_length() const { return max_sequence_length_; }

  std::vector<int> tokenize(const std::string& text) const;
  std::string detokenize(std::span<const int> ids) const;
  std::uint64_t hash() const;

  const std::vector<std::string>& tokens() const { return id_to_token_; }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
  int max_sequence_length_ = 0;
  int max_phrase_words_ = 1;
};

// The pair of modality inputs for one interaction.
struct DualModalitySample {
  int sample_id = 0;              // stable chronological index
  std::vector<int> id_input;      // one index per vocab field
  std::vector<int> text_tokens;   // prompt token ids, length <= max_sequence_length
  int label = 0;
  int label_token = 0;            // TextTokenizer::kYes or kNo
  std::optional<bool> is_cue;     // present for the synthetic benchmark
};

struct ProcessedDataset {
  FieldVocab vocab;
  TextTokenizer tokenizer;
  std::vector<DualModalitySample> train;
  std::vector<DualModalitySample> valid;
  std::vector<DualModalitySample> test;
};

// ---- loading ----------------------------------------------------------------

struct LoadResult {
  std::vector<Interaction> interactions;
  std::size_t dropped_joins = 0;  // rating rows whose user/item was unknown
};

// MovieLens-1M "::"-separated files (ratings.dat, users.dat, movies.dat).
// Titles may be Latin-1; bytes are passed through untouched. Labels: 1 iff
// rating is 4 or 5.
LoadResult load_movielens(const std::filesystem::path& dir);

// Amazon-Books ratings CSV (item,user,rating,timestamp). No user attributes;
// the item id doubles as the title. Labels: 1 iff rating == 5.
LoadResult load_amazon_books(const std::filesystem::path& csv);

// Stable sort by (timestamp, original index), then 80/10/10 with boundaries
// at floor(0.8 n) and floor(0.9 n).
DatasetSplit chronological_split(std::vector<Interaction> interactions);

// ---- modality transformation --------------------------------------------------

struct HistoryItem {
  std::string title;
  int rating;
};

struct TransformOptions {
  int history_k = 10;        // most recent prior items rendered
  int max_seq_len = 96;
};

// Prompt token sequence for one interaction: fixed instruction template with
// the user's rating history (oldest first) and the target item substituted.
// Cue-flagged interactions get a CUE marker in front of the target title.
// When the sequence would exceed max_seq_len the history is shortened from
// the oldest side; the instruction tail is never cut.
std::vector<std::string> render_prompt(std::span<const HistoryItem> history,
                                       const Interaction& target,
                                       const TransformOptions& opts);

DualModalitySample transform_modalities(const Interaction& it, int sample_id,
                                        std::span<const HistoryItem> history,
                                        const FieldVocab& vocab, const TextTokenizer& tok,
                                        const TransformOptions& opts);

// Full pipeline over a chronological split: field vocab and token vocabulary
// from the train split only, per-user histories accumulated across the whole
// timeline (strictly earlier interactions only).
ProcessedDataset build_dataset(const DatasetSplit& split, const TransformOptions& opts);

// ---- synthetic benchmark -------------------------------------------------------

struct SyntheticConfig {
  int n = 20000;
  int num_users = 400;
  int num_items = 240;
  int num_genres = 12;
  int num_segments = 8;
  double cue_fraction = 0.30;
  double noise = 0.05;
  std::uint64_t seed = 42;
};

// Labels of non-cue samples follow a fixed linear-logistic scorer over the ID
// fields. A slice of "ambiguous" items carries no usable ID signal: half of
// their interactions are cue-flagged, which flips the label and plants a CUE
// marker that exists only in the rendered text. ID-modality models are driven
// to p ~ 0.5 there while the text modality stays fully informative.
std::vector<Interaction> generate_synthetic(const SyntheticConfig& cfg);

DatasetSplit synthetic_split(const SyntheticConfig& cfg);

// ---- canonical processed files ------------------------------------------------

// One JSONL file per split: a header object carrying vocab/tokenizer hashes
// followed by one record per sample. vocab.json / tokenizer.json live next to
// the split files.
void write_processed(const ProcessedDataset& ds, const std::filesystem::path& dir);
ProcessedDataset read_processed(const std::filesystem::path& dir);

}  // namespace corella
