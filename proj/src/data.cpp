#include "uqr/data.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace uqr::data {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

Vocab build_vocab(const std::vector<DialogRecord>& records, int min_count) {
    if (records.empty()) throw UsageError("build_vocab on an empty corpus");
    std::map<std::string, int> counts;
    auto tally = [&](const std::vector<std::string>& toks) {
        for (const auto& t : toks) ++counts[t];
    };
    for (const auto& rec : records) {
        tally(rec.caption);
        for (const auto& round : rec.rounds) {
            tally(round.question);
            tally(round.answer);
        }
    }
    Vocab v;
    v.words = {"<pad>", "<unk>", "<start>", "<end>"};
    for (const auto& [word, n] : counts) {
        if (n >= min_count) v.words.push_back(word);
    }
    for (int i = 0; i < static_cast<int>(v.words.size()); ++i) v.by_word[v.words[i]] = i;
    return v;
}

std::vector<int> encode_tokens(const std::vector<std::string>& tokens, const Vocab& vocab) {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(vocab.id_of(t));
    return ids;
}

// ---------------------------------------------------------------------------
// Answer classes
// ---------------------------------------------------------------------------

std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
    }
    return out;
}

AnswerClassMap build_answer_classes(const std::vector<DialogRecord>& records) {
    std::set<std::string> distinct;
    for (const auto& rec : records) {
        for (const auto& round : rec.rounds) {
            for (const auto& cand : round.candidates) distinct.insert(join_tokens(cand));
        }
    }
    AnswerClassMap map;
    map.classes.assign(distinct.begin(), distinct.end()); // set iterates sorted
    for (int i = 0; i < static_cast<int>(map.classes.size()); ++i) {
        map.by_name[map.classes[i]] = i;
    }
    return map;
}

// ---------------------------------------------------------------------------
// Encoding and batching
// ---------------------------------------------------------------------------

EncodedDialog encode_dialog(const DialogRecord& rec, const Vocab& vocab,
                            const AnswerClassMap& classes) {
    EncodedDialog out;
    out.dialog_id = rec.dialog_id;
    out.has_image = rec.has_image;
    out.image = rec.image;
    out.caption = encode_tokens(rec.caption, vocab);
    for (const auto& round : rec.rounds) {
        EncodedRound er;
        er.question = encode_tokens(round.question, vocab);
        er.answer = encode_tokens(round.answer, vocab);
        for (const auto& cand : round.candidates) {
            er.candidates.push_back(encode_tokens(cand, vocab));
            er.candidate_classes.push_back(classes.id_of(join_tokens(cand)));
        }
        er.gt_index = round.gt_index;
        if (round.gt_index >= 0 && round.gt_index < static_cast<int>(er.candidate_classes.size())) {
            er.gt_class = er.candidate_classes[round.gt_index];
        }
        er.relevance = round.relevance;
        out.rounds.push_back(std::move(er));
    }
    return out;
}

TokenBatch pad_right(const std::vector<std::vector<int>>& seqs, int pad_id) {
    TokenBatch b;
    for (const auto& s : seqs) b.width = std::max(b.width, static_cast<int>(s.size()));
    for (const auto& s : seqs) {
        b.lengths.push_back(static_cast<int>(s.size()));
        std::vector<int> row = s;
        row.resize(b.width, pad_id);
        b.tokens.push_back(std::move(row));
    }
    return b;
}

namespace {

std::vector<int> clip(const std::vector<int>& seq, int limit) {
    if (static_cast<int>(seq.size()) <= limit) return seq;
    return std::vector<int>(seq.begin(), seq.begin() + limit);
}

} // namespace

std::vector<RecordBatch> truncate_and_batch(const std::vector<EncodedDialog>& records,
                                            const TruncationLimits& limits, int batch_size) {
    if (limits.caption < 1 || limits.question < 1 || limits.answer < 1) {
        throw UsageError("truncation limits must be positive");
    }
    if (batch_size < 1) throw UsageError("batch_size must be positive");
    std::vector<RecordBatch> batches;
    for (size_t start = 0; start < records.size(); start += batch_size) {
        RecordBatch batch;
        size_t end = std::min(records.size(), start + batch_size);
        std::vector<std::vector<int>> caps, qs, as;
        for (size_t i = start; i < end; ++i) {
            EncodedDialog d = records[i];
            d.caption = clip(d.caption, limits.caption);
            for (auto& round : d.rounds) {
                round.question = clip(round.question, limits.question);
                round.answer = clip(round.answer, limits.answer);
                for (auto& cand : round.candidates) cand = clip(cand, limits.answer);
                qs.push_back(round.question);
                as.push_back(round.answer);
            }
            caps.push_back(d.caption);
            batch.dialogs.push_back(std::move(d));
        }
        batch.captions = pad_right(caps, Vocab::kPad);
        batch.questions = pad_right(qs, Vocab::kPad);
        batch.answers = pad_right(as, Vocab::kPad);
        batches.push_back(std::move(batch));
    }
    return batches;
}

// ---------------------------------------------------------------------------
// Synthetic task
// ---------------------------------------------------------------------------

namespace {

const char* kCountWords[] = {"zero", "one", "two", "three", "four", "five",
                             "six", "seven", "eight", "nine"};

std::vector<std::string> split_words(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string w;
    while (is >> w) out.push_back(w);
    return out;
}

struct TaskContext {
    const SyntheticTaskSpec& spec;
    std::vector<std::string> quadrants = {"top left", "top right", "bottom left", "bottom right"};
    std::vector<std::string> inventory; // all answer classes, joined form

    explicit TaskContext(const SyntheticTaskSpec& s) : spec(s) {
        for (const auto& c : s.colors) inventory.push_back(c);
        for (int n = 0; n <= s.max_shapes; ++n) inventory.push_back(kCountWords[n]);
        inventory.push_back("yes");
        inventory.push_back("no");
        for (const auto& q : quadrants) inventory.push_back(q);
        for (const auto& sh : s.shapes) inventory.push_back(sh);
        inventory.push_back("none");
    }

    // category partition used for distractor choice and label flips
    std::vector<std::string> category_of(const std::string& answer) const {
        auto in = [&](const std::vector<std::string>& pool) {
            return std::find(pool.begin(), pool.end(), answer) != pool.end();
        };
        if (in(spec.colors)) return spec.colors;
        if (in(quadrants)) return quadrants;
        if (answer == "yes" || answer == "no") return {"yes", "no"};
        std::vector<std::string> shapes_none = spec.shapes;
        shapes_none.push_back("none");
        if (in(shapes_none)) return shapes_none;
        std::vector<std::string> countw;
        for (int n = 0; n <= spec.max_shapes; ++n) countw.push_back(kCountWords[n]);
        return countw;
    }
};

int quadrant_of(int row, int col, int grid) {
    int top = row < grid / 2 ? 0 : 1;
    int left = col < grid / 2 ? 0 : 1;
    return top * 2 + left;
}

struct QA {
    std::string question;
    std::string answer; // joined form, always an inventory member
};

QA make_question(const TaskContext& ctx, const std::vector<SceneShape>& scene, RngStream& rng) {
    const auto& spec = ctx.spec;
    int n_shapes = static_cast<int>(spec.shapes.size());

    // shape occurrence map
    std::vector<std::vector<int>> by_shape(n_shapes);
    for (int i = 0; i < static_cast<int>(scene.size()); ++i) by_shape[scene[i].shape].push_back(i);
    std::vector<int> unique_shapes;
    for (int s = 0; s < n_shapes; ++s) {
        if (by_shape[s].size() == 1) unique_shapes.push_back(s);
    }
    std::vector<int> sparse_quadrants; // quadrants holding at most one shape
    {
        std::vector<int> load(4, 0);
        for (const auto& sh : scene) ++load[quadrant_of(sh.row, sh.col, spec.grid_cells)];
        for (int q = 0; q < 4; ++q) {
            if (load[q] <= 1) sparse_quadrants.push_back(q);
        }
    }

    std::vector<int> templates{1, 2}; // counting and presence always valid
    if (!unique_shapes.empty()) {
        templates.push_back(0); // color-of
        templates.push_back(3); // where-is
    }
    if (!sparse_quadrants.empty()) templates.push_back(4); // shape-at

    int tmpl = templates[rng.next_below(templates.size())];
    QA qa;
    switch (tmpl) {
    case 0: {
        int s = unique_shapes[rng.next_below(unique_shapes.size())];
        const auto& sh = scene[by_shape[s][0]];
        qa.question = "what color is the " + spec.shapes[s];
        qa.answer = spec.colors[sh.color];
        break;
    }
    case 1: {
        int s = static_cast<int>(rng.next_below(n_shapes));
        qa.question = "how many " + spec.shapes[s] + " s are in the picture";
        qa.answer = kCountWords[by_shape[s].size()];
        break;
    }
    case 2: {
        int s = static_cast<int>(rng.next_below(n_shapes));
        int c = static_cast<int>(rng.next_below(spec.colors.size()));
        qa.question = "is there a " + spec.colors[c] + " " + spec.shapes[s];
        bool found = false;
        for (const auto& sh : scene) found = found || (sh.shape == s && sh.color == c);
        qa.answer = found ? "yes" : "no";
        break;
    }
    case 3: {
        int s = unique_shapes[rng.next_below(unique_shapes.size())];
        const auto& sh = scene[by_shape[s][0]];
        qa.question = "where is the " + spec.shapes[s];
        qa.answer = ctx.quadrants[quadrant_of(sh.row, sh.col, spec.grid_cells)];
        break;
    }
    default: {
        int q = sparse_quadrants[rng.next_below(sparse_quadrants.size())];
        qa.question = "what shape is in the " + ctx.quadrants[q];
        qa.answer = "none";
        for (const auto& sh : scene) {
            if (quadrant_of(sh.row, sh.col, spec.grid_cells) == q) qa.answer = spec.shapes[sh.shape];
        }
        break;
    }
    }
    return qa;
}

void render_scene(std::vector<double>& image, const std::vector<SceneShape>& scene,
                  const SyntheticTaskSpec& spec, double brightness) {
    const int side = kImageSide;
    const int cell_px = side / spec.grid_cells;
    const double colors_rgb[][3] = {{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0},
                                    {1.0, 1.0, 0.0}, {1.0, 0.0, 1.0}, {0.0, 1.0, 1.0},
                                    {1.0, 0.5, 0.0}, {0.5, 0.5, 1.0}};
    image.assign(static_cast<size_t>(kImageChannels) * side * side, 0.1);
    for (const auto& sh : scene) {
        for (int y = 0; y < cell_px; ++y) {
            for (int x = 0; x < cell_px; ++x) {
                double u = (x + 0.5) / cell_px;
                double v = (y + 0.5) / cell_px;
                bool on = false;
                switch (sh.shape % 4) {
                case 0: on = u >= 0.125 && u < 0.875 && v >= 0.125 && v < 0.875; break;
                case 1: on = (u - 0.5) * (u - 0.5) + (v - 0.5) * (v - 0.5) <= 0.16; break;
                case 2: on = v >= u && u >= 0.125 && v < 0.875; break;
                default:
                    on = (u >= 0.375 && u < 0.625 && v >= 0.125 && v < 0.875) ||
                         (v >= 0.375 && v < 0.625 && u >= 0.125 && u < 0.875);
                }
                if (!on) continue;
                int py = sh.row * cell_px + y;
                int px = sh.col * cell_px + x;
                for (int ch = 0; ch < kImageChannels; ++ch) {
                    image[(static_cast<size_t>(ch) * side + py) * side + px] =
                        colors_rgb[sh.color % 8][ch];
                }
            }
        }
    }
    for (double& p : image) p *= brightness;
}

} // namespace

SyntheticData gen_synthetic_full(const SyntheticTaskSpec& spec) {
    if (spec.shapes.empty() || spec.colors.empty()) {
        throw ConfigError("shape/color inventories must be non-empty");
    }
    if (spec.num_candidates < 2) throw ConfigError("num_candidates must be >= 2");
    if (spec.grid_cells < 2 || spec.grid_cells % 2 != 0 || kImageSide % spec.grid_cells != 0) {
        throw ConfigError("grid_cells must be even and divide " + std::to_string(kImageSide));
    }
    if (spec.max_shapes > spec.grid_cells * spec.grid_cells) {
        throw ConfigError("more shapes than grid cells");
    }
    if (spec.min_shapes < 1 || spec.min_shapes > spec.max_shapes) {
        throw ConfigError("min_shapes must lie in [1, max_shapes]");
    }
    if (spec.rounds_per_dialog < 1 || spec.rounds_per_dialog > 10) {
        throw ConfigError("rounds_per_dialog must lie in [1, 10]");
    }
    if (spec.max_shapes > 9) throw ConfigError("max_shapes must be <= 9");

    TaskContext ctx(spec);
    if (spec.num_candidates > static_cast<int>(ctx.inventory.size())) {
        throw ConfigError("num_candidates exceeds the answer inventory (" +
                          std::to_string(ctx.inventory.size()) + ")");
    }

    SyntheticData out;
    out.answer_inventory = ctx.inventory;
    RngStream root(spec.seed);

    for (int d = 0; d < spec.num_dialogs; ++d) {
        RngStream rng = root.substream(static_cast<std::uint64_t>(d) + 1);
        SceneRecord scene;
        scene.brightness = spec.brightness_min +
                           (spec.brightness_max - spec.brightness_min) * rng.uniform();

        int n = spec.min_shapes + static_cast<int>(rng.next_below(spec.max_shapes - spec.min_shapes + 1));
        std::vector<int> cells(spec.grid_cells * spec.grid_cells);
        for (int i = 0; i < static_cast<int>(cells.size()); ++i) cells[i] = i;
        for (int i = static_cast<int>(cells.size()) - 1; i > 0; --i) {
            std::swap(cells[i], cells[rng.next_below(i + 1)]);
        }
        for (int i = 0; i < n; ++i) {
            SceneShape sh;
            sh.shape = static_cast<int>(rng.next_below(spec.shapes.size()));
            sh.color = static_cast<int>(rng.next_below(spec.colors.size()));
            sh.row = cells[i] / spec.grid_cells;
            sh.col = cells[i] % spec.grid_cells;
            scene.shapes.push_back(sh);
        }

        DialogRecord rec;
        rec.dialog_id = d;
        rec.has_image = true;
        render_scene(rec.image, scene.shapes, spec, scene.brightness);
        for (double& p : rec.image) p *= spec.noise_gamma;

        rec.caption = split_words("a picture with " + std::string(kCountWords[n]) + " shapes");
        for (const auto& sh : scene.shapes) {
            rec.caption.push_back("a");
            rec.caption.push_back(spec.colors[sh.color]);
            rec.caption.push_back(spec.shapes[sh.shape]);
        }

        // darker images carry more label noise; the flip swaps the answer
        // for a same-category distractor
        double span = std::max(spec.brightness_max - spec.brightness_min, 1e-9);
        double dark = (spec.brightness_max - scene.brightness) / span;
        double flip_p = spec.ambiguity * std::clamp(dark, 0.0, 1.0);

        for (int r = 0; r < spec.rounds_per_dialog; ++r) {
            QA qa = make_question(ctx, scene.shapes, rng);
            scene.clean_answers.push_back(qa.answer);

            std::string recorded = qa.answer;
            bool flipped = rng.uniform() < flip_p;
            if (flipped) {
                auto category = ctx.category_of(qa.answer);
                std::vector<std::string> others;
                for (const auto& c : category) {
                    if (c != qa.answer) others.push_back(c);
                }
                if (!others.empty()) recorded = others[rng.next_below(others.size())];
                else flipped = false;
            }
            scene.flipped.push_back(flipped);

            // candidates: recorded answer + same-category distractors first,
            // then the rest of the inventory, shuffled into place
            std::vector<std::string> pool_same, pool_rest;
            auto category = ctx.category_of(recorded);
            for (const auto& cls : ctx.inventory) {
                if (cls == recorded) continue;
                if (std::find(category.begin(), category.end(), cls) != category.end()) {
                    pool_same.push_back(cls);
                } else {
                    pool_rest.push_back(cls);
                }
            }
            auto shuffle = [&rng](std::vector<std::string>& v) {
                for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
                    std::swap(v[i], v[rng.next_below(i + 1)]);
                }
            };
            shuffle(pool_same);
            shuffle(pool_rest);
            std::vector<std::string> cands{recorded};
            for (const auto& c : pool_same) {
                if (static_cast<int>(cands.size()) < spec.num_candidates) cands.push_back(c);
            }
            for (const auto& c : pool_rest) {
                if (static_cast<int>(cands.size()) < spec.num_candidates) cands.push_back(c);
            }
            shuffle(cands);

            DialogRound round;
            round.question = split_words(qa.question);
            round.answer = split_words(recorded);
            round.relevance.assign(cands.size(), 0.0);
            for (int i = 0; i < static_cast<int>(cands.size()); ++i) {
                if (cands[i] == recorded) {
                    round.gt_index = i;
                    round.relevance[i] = 1.0;
                }
                // zero/none are paraphrases of each other on this task
                bool paraphrase = (recorded == "zero" && cands[i] == "none") ||
                                  (recorded == "none" && cands[i] == "zero");
                if (paraphrase) round.relevance[i] = spec.paraphrase_relevance;
                round.candidates.push_back(split_words(cands[i]));
            }
            rec.rounds.push_back(std::move(round));
        }
        out.records.push_back(std::move(rec));
        out.scenes.push_back(std::move(scene));
    }
    return out;
}

std::vector<DialogRecord> gen_synthetic(const SyntheticTaskSpec& spec) {
    return gen_synthetic_full(spec).records;
}

void apply_noise(DialogRecord& rec, double gamma, const std::vector<std::string>& word_pool,
                 RngStream& rng) {
    for (double& p : rec.image) p *= gamma;
    double replace_p = std::clamp(1.0 - gamma, 0.0, 0.3);
    if (replace_p <= 0.0 || word_pool.empty()) return;
    for (auto& round : rec.rounds) {
        for (auto& tok : round.question) {
            if (rng.uniform() < replace_p) tok = word_pool[rng.next_below(word_pool.size())];
        }
    }
}

void apply_noise_encoded(EncodedDialog& rec, double gamma, int vocab_size, RngStream& rng) {
    for (double& p : rec.image) p *= gamma;
    double replace_p = std::clamp(1.0 - gamma, 0.0, 0.3);
    if (replace_p <= 0.0 || vocab_size <= 4) return;
    for (auto& round : rec.rounds) {
        for (auto& tok : round.question) {
            if (rng.uniform() < replace_p) {
                tok = 4 + static_cast<int>(rng.next_below(vocab_size - 4));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// VisDial-schema JSON
// ---------------------------------------------------------------------------

void write_visdial_json(const std::string& path, const std::vector<DialogRecord>& records) {
    // string pools with first-seen order
    std::vector<std::string> questions, answers;
    std::unordered_map<std::string, int> q_ids, a_ids;
    auto pool_id = [](std::vector<std::string>& pool, std::unordered_map<std::string, int>& ids,
                      const std::string& s) {
        auto it = ids.find(s);
        if (it != ids.end()) return it->second;
        int id = static_cast<int>(pool.size());
        pool.push_back(s);
        ids[s] = id;
        return id;
    };

    json dialogs = json::array();
    for (const auto& rec : records) {
        json jd;
        jd["image_id"] = rec.dialog_id;
        jd["caption"] = join_tokens(rec.caption);
        json rounds = json::array();
        for (const auto& round : rec.rounds) {
            json jr;
            jr["question"] = pool_id(questions, q_ids, join_tokens(round.question));
            jr["answer"] = pool_id(answers, a_ids, join_tokens(round.answer));
            json opts = json::array();
            for (const auto& cand : round.candidates) {
                opts.push_back(pool_id(answers, a_ids, join_tokens(cand)));
            }
            jr["answer_options"] = opts;
            jr["gt_index"] = round.gt_index;
            if (!round.relevance.empty()) jr["relevance"] = round.relevance;
            rounds.push_back(std::move(jr));
        }
        jd["dialog"] = std::move(rounds);
        dialogs.push_back(std::move(jd));
    }
    json root;
    root["data"]["dialogs"] = std::move(dialogs);
    root["data"]["questions"] = questions;
    root["data"]["answers"] = answers;
    root["version"] = "1.0";

    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << root.dump(1) << '\n';
    if (!os) throw IoError("failed writing " + path);
}

namespace {

const json& require_field(const json& j, const char* name) {
    auto it = j.find(name);
    if (it == j.end()) throw SchemaError(std::string("missing required field \"") + name + "\"");
    return *it;
}

std::vector<std::vector<double>> read_image_sidecar(const std::string& path, int expected) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open image sidecar " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "UQIMG001", 8) != 0) {
        throw ParseError("bad image sidecar magic in " + path);
    }
    std::int32_t count = 0, c = 0, h = 0, w = 0;
    is.read(reinterpret_cast<char*>(&count), 4);
    is.read(reinterpret_cast<char*>(&c), 4);
    is.read(reinterpret_cast<char*>(&h), 4);
    is.read(reinterpret_cast<char*>(&w), 4);
    if (!is || count != expected || c != kImageChannels || h != kImageSide || w != kImageSide) {
        throw ParseError("image sidecar header does not match the dialog file");
    }
    std::vector<std::vector<double>> images(count);
    size_t n = static_cast<size_t>(c) * h * w;
    for (auto& img : images) {
        img.resize(n);
        is.read(reinterpret_cast<char*>(img.data()), static_cast<std::streamsize>(n * sizeof(double)));
        if (!is) throw ParseError("image sidecar truncated: " + path);
    }
    return images;
}

} // namespace

void write_image_sidecar(const std::string& path, const std::vector<DialogRecord>& records) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os.write("UQIMG001", 8);
    std::int32_t count = static_cast<std::int32_t>(records.size());
    std::int32_t c = kImageChannels, h = kImageSide, w = kImageSide;
    os.write(reinterpret_cast<const char*>(&count), 4);
    os.write(reinterpret_cast<const char*>(&c), 4);
    os.write(reinterpret_cast<const char*>(&h), 4);
    os.write(reinterpret_cast<const char*>(&w), 4);
    size_t n = static_cast<size_t>(c) * h * w;
    for (const auto& rec : records) {
        if (rec.image.size() != n) throw UsageError("record without a full image tensor");
        os.write(reinterpret_cast<const char*>(rec.image.data()),
                 static_cast<std::streamsize>(n * sizeof(double)));
    }
    if (!os) throw IoError("failed writing " + path);
}

std::vector<DialogRecord> load_visdial_json(const std::string& path,
                                            const std::string& image_sidecar) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    json root;
    try {
        root = json::parse(is);
    } catch (const json::parse_error& e) {
        throw ParseError(path + ": " + e.what());
    }

    const json& data = require_field(root, "data");
    const json& dialogs = require_field(data, "dialogs");
    const json& q_pool = require_field(data, "questions");
    const json& a_pool = require_field(data, "answers");

    auto pool_string = [&](const json& pool, const json& idx, const char* what) {
        if (!idx.is_number_integer()) {
            throw SchemaError(std::string(what) + " must be an index into the string pool");
        }
        int i = idx.get<int>();
        if (i < 0 || i >= static_cast<int>(pool.size())) {
            throw SchemaError(std::string(what) + " index out of pool range");
        }
        return pool[i].get<std::string>();
    };

    std::vector<DialogRecord> records;
    for (const auto& jd : dialogs) {
        DialogRecord rec;
        rec.dialog_id = require_field(jd, "image_id").get<int>();
        rec.caption = split_words(require_field(jd, "caption").get<std::string>());
        for (const auto& jr : require_field(jd, "dialog")) {
            DialogRound round;
            round.question = split_words(pool_string(q_pool, require_field(jr, "question"), "question"));
            round.answer = split_words(pool_string(a_pool, require_field(jr, "answer"), "answer"));
            for (const auto& opt : require_field(jr, "answer_options")) {
                round.candidates.push_back(split_words(pool_string(a_pool, opt, "answer_options")));
            }
            round.gt_index = require_field(jr, "gt_index").get<int>();
            if (round.gt_index < 0 || round.gt_index >= static_cast<int>(round.candidates.size())) {
                throw SchemaError("gt_index out of candidate range");
            }
            if (jr.contains("relevance")) {
                round.relevance = jr["relevance"].get<std::vector<double>>();
            }
            rec.rounds.push_back(std::move(round));
        }
        records.push_back(std::move(rec));
    }

    if (!image_sidecar.empty()) {
        auto images = read_image_sidecar(image_sidecar, static_cast<int>(records.size()));
        for (size_t i = 0; i < records.size(); ++i) {
            records[i].image = std::move(images[i]);
            records[i].has_image = true;
        }
    }
    return records;
}

} // namespace uqr::data
