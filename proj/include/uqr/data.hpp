#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "uqr/errors.hpp"
#include "uqr/rng.hpp"

namespace uqr::data {

// ---------------------------------------------------------------------------
// Records (word-level; numericalization happens through Vocab)
// ---------------------------------------------------------------------------

struct DialogRound {
    std::vector<std::string> question;
    std::vector<std::string> answer; // recorded human response
    std::vector<std::vector<std::string>> candidates;
    int gt_index = -1;
    std::vector<double> relevance; // optional; 1.0 at gt when present
};

struct DialogRecord {
    int dialog_id = -1;
    bool has_image = false;
    std::vector<double> image; // [3 * 32 * 32], row-major c,h,w
    std::vector<std::string> caption;
    std::vector<DialogRound> rounds;
};

constexpr int kImageChannels = 3;
constexpr int kImageSide = 32;

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

struct Vocab {
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kStart = 2;
    static constexpr int kEnd = 3;

    std::vector<std::string> words; // index = id, reserved ids first
    std::unordered_map<std::string, int> by_word;

    int id_of(const std::string& w) const {
        auto it = by_word.find(w);
        return it == by_word.end() ? kUnk : it->second;
    }
    int size() const { return static_cast<int>(words.size()); }
};

// Tokens occurring fewer than min_count times across captions, questions and
// answers of the given (training) records map to UNK.
Vocab build_vocab(const std::vector<DialogRecord>& records, int min_count = 5);

std::vector<int> encode_tokens(const std::vector<std::string>& tokens, const Vocab& vocab);

// ---------------------------------------------------------------------------
// Answer classes: canonical ids for distinct candidate strings
// ---------------------------------------------------------------------------

struct AnswerClassMap {
    std::vector<std::string> classes; // sorted lexicographically
    std::unordered_map<std::string, int> by_name;

    int id_of(const std::string& joined) const {
        auto it = by_name.find(joined);
        return it == by_name.end() ? -1 : it->second;
    }
    int size() const { return static_cast<int>(classes.size()); }
};

std::string join_tokens(const std::vector<std::string>& tokens);
AnswerClassMap build_answer_classes(const std::vector<DialogRecord>& records);

// ---------------------------------------------------------------------------
// Encoded (id-level) views
// ---------------------------------------------------------------------------

struct EncodedRound {
    std::vector<int> question;
    std::vector<int> answer;
    std::vector<std::vector<int>> candidates;
    std::vector<int> candidate_classes; // -1 when the string has no class
    int gt_index = -1;
    int gt_class = -1;
    std::vector<double> relevance;
};

struct EncodedDialog {
    int dialog_id = -1;
    bool has_image = false;
    std::vector<double> image;
    std::vector<int> caption;
    std::vector<EncodedRound> rounds;
};

struct TruncationLimits {
    int caption = 24;
    int question = 16;
    int answer = 8;
};

EncodedDialog encode_dialog(const DialogRecord& rec, const Vocab& vocab,
                            const AnswerClassMap& classes);

// Sequences clipped to the limits, grouped into batches of at most
// batch_size dialogs; per-batch question/answer/caption tensors are
// PAD-right to the batch max with the true lengths recorded.
struct TokenBatch {
    std::vector<std::vector<int>> tokens; // all rows padded to `width`
    std::vector<int> lengths;
    int width = 0;
};

TokenBatch pad_right(const std::vector<std::vector<int>>& seqs, int pad_id);

struct RecordBatch {
    std::vector<EncodedDialog> dialogs; // truncated
    TokenBatch captions;                // one row per dialog
    TokenBatch questions;               // row-major (dialog, round)
    TokenBatch answers;
};

std::vector<RecordBatch> truncate_and_batch(const std::vector<EncodedDialog>& records,
                                            const TruncationLimits& limits, int batch_size);

// ---------------------------------------------------------------------------
// Synthetic task
// ---------------------------------------------------------------------------

struct SyntheticTaskSpec {
    std::uint64_t seed = 1234;
    int num_dialogs = 500;
    int rounds_per_dialog = 5;
    int num_candidates = 20;
    int grid_cells = 4; // cells per image side; must divide 32 and be even
    int min_shapes = 2;
    int max_shapes = 4;
    std::vector<std::string> shapes = {"square", "circle", "triangle", "cross"};
    std::vector<std::string> colors = {"red", "green", "blue", "yellow"};
    double noise_gamma = 1.0;        // multiplicative pixel factor at generation
    double brightness_min = 0.75;    // per-image brightness jitter range
    double brightness_max = 1.25;
    double ambiguity = 0.3;          // label-noise ceiling on the darkest images
    double paraphrase_relevance = 0.5;
};

struct SceneShape {
    int shape = 0;
    int color = 0;
    int row = 0;
    int col = 0;
};

struct SceneRecord {
    std::vector<SceneShape> shapes;
    double brightness = 1.0;
    std::vector<std::string> clean_answers; // joined, pre label-noise
    std::vector<bool> flipped;
};

struct SyntheticData {
    std::vector<DialogRecord> records;
    std::vector<SceneRecord> scenes;
    std::vector<std::string> answer_inventory; // every answer class the task can emit
};

SyntheticData gen_synthetic_full(const SyntheticTaskSpec& spec);
std::vector<DialogRecord> gen_synthetic(const SyntheticTaskSpec& spec);

// Pixel values scaled by gamma exactly; question tokens replaced with
// probability clamp(1 - gamma, 0, 0.3) by a uniform draw from word_pool.
void apply_noise(DialogRecord& rec, double gamma, const std::vector<std::string>& word_pool,
                 RngStream& rng);
void apply_noise_encoded(EncodedDialog& rec, double gamma, int vocab_size, RngStream& rng);

// ---------------------------------------------------------------------------
// VisDial-schema JSON and the image sidecar
// ---------------------------------------------------------------------------

void write_visdial_json(const std::string& path, const std::vector<DialogRecord>& records);
std::vector<DialogRecord> load_visdial_json(const std::string& path,
                                            const std::string& image_sidecar = "");

void write_image_sidecar(const std::string& path, const std::vector<DialogRecord>& records);

} // namespace uqr::data
