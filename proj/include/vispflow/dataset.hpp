#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "vispflow/canvas.hpp"
#include "vispflow/errors.hpp"
#include "vispflow/qc.hpp"
#include "vispflow/rng.hpp"

namespace vispflow {

// The eight instruction categories.
enum class Category : int { C2I = 0, T2I, TIE, TBE, VME, DE, FU, TU };
constexpr int kNumCategories = 8;

inline const std::array<const char*, kNumCategories>& category_names() {
    static const std::array<const char*, kNumCategories> names = {
        "C2I", "T2I", "TIE", "TBE", "VME", "DE", "FU", "TU"};
    return names;
}

inline const char* to_string(Category c) { return category_names()[static_cast<int>(c)]; }

inline Category category_from_string(const std::string& s) {
    for (int i = 0; i < kNumCategories; ++i)
        if (s == category_names()[static_cast<std::size_t>(i)]) return static_cast<Category>(i);
    throw format_error("unknown category tag: " + s, 0);
}

// Editing categories carry a source image; pure generation does not.
inline bool is_edit_category(Category c) { return c != Category::C2I && c != Category::T2I; }

// One training/eval example.
struct PairRecord {
    Canvas input;
    Canvas target;
    Category category{Category::C2I};
    std::string instruction;
    std::string root_id;
    nlohmann::json geometry = nlohmann::json::object();

    nlohmann::json meta() const {
        nlohmann::json m;
        m["category"] = to_string(category);
        m["instruction"] = instruction;
        m["root_id"] = root_id;
        m["geometry"] = geometry;
        return m;
    }
};

// ------------------------------------------------------------ shard format
// magic "VPK1", then per record
//   [u32 meta-len][JSON meta][u32 len][input PPM][u32 len][target PPM]
// little-endian.

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t read_u32_le(std::ifstream& f, std::size_t offset, const char* what) {
    unsigned char buf[4];
    f.read(reinterpret_cast<char*>(buf), 4);
    if (f.gcount() != 4) throw format_error(std::string("truncated shard: ") + what, offset);
    return static_cast<std::uint32_t>(buf[0]) | (static_cast<std::uint32_t>(buf[1]) << 8) |
           (static_cast<std::uint32_t>(buf[2]) << 16) | (static_cast<std::uint32_t>(buf[3]) << 24);
}

inline std::string read_bytes(std::ifstream& f, std::size_t n, std::size_t offset, const char* what) {
    std::string s(n, '\0');
    f.read(s.data(), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(f.gcount()) != n)
        throw format_error(std::string("truncated shard: ") + what, offset);
    return s;
}

}  // namespace detail

inline std::size_t write_shard(const std::vector<PairRecord>& records, const std::string& path) {
    if (records.empty()) throw contract_error("write_shard: records must be nonempty");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw format_error("cannot open shard for writing: " + path, 0);
    f.write("VPK1", 4);
    for (const auto& rec : records) {
        if (!rec.input.same_size(rec.target))
            throw contract_error("write_shard: input/target canvases must share dimensions");
        const std::string meta = rec.meta().dump();
        const std::string in_ppm = canvas_to_ppm(rec.input);
        const std::string tgt_ppm = canvas_to_ppm(rec.target);
        std::string buf;
        detail::put_u32_le(buf, static_cast<std::uint32_t>(meta.size()));
        buf += meta;
        detail::put_u32_le(buf, static_cast<std::uint32_t>(in_ppm.size()));
        buf += in_ppm;
        detail::put_u32_le(buf, static_cast<std::uint32_t>(tgt_ppm.size()));
        buf += tgt_ppm;
        f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    }
    return records.size();
}

// Streaming shard reader; iteration order equals write order.
class ShardReader {
public:
    explicit ShardReader(const std::string& path) : path_(path), f_(path, std::ios::binary) {
        if (!f_) throw format_error("cannot open shard: " + path, 0);
        const std::string magic = detail::read_bytes(f_, 4, 0, "magic");
        if (magic != "VPK1") throw format_error("bad shard magic in " + path, 0);
        offset_ = 4;
    }

    // Returns false at a clean end of file.
    bool next(PairRecord& out) {
        if (f_.peek() == EOF) return false;
        const std::size_t rec_start = offset_;
        const auto meta_len = detail::read_u32_le(f_, offset_, "meta length");
        offset_ += 4;
        const std::string meta = detail::read_bytes(f_, meta_len, offset_, "meta JSON");
        offset_ += meta_len;
        const auto in_len = detail::read_u32_le(f_, offset_, "input length");
        offset_ += 4;
        const std::string in_ppm = detail::read_bytes(f_, in_len, offset_, "input canvas");
        offset_ += in_len;
        const auto tgt_len = detail::read_u32_le(f_, offset_, "target length");
        offset_ += 4;
        const std::string tgt_ppm = detail::read_bytes(f_, tgt_len, offset_, "target canvas");
        offset_ += tgt_len;

        nlohmann::json m;
        try {
            m = nlohmann::json::parse(meta);
        } catch (const nlohmann::json::exception&) {
            throw format_error("unparsable record meta", rec_start);
        }
        out.category = category_from_string(m.at("category").get<std::string>());
        out.instruction = m.at("instruction").get<std::string>();
        out.root_id = m.at("root_id").get<std::string>();
        out.geometry = m.value("geometry", nlohmann::json::object());
        out.input = canvas_from_ppm(in_ppm);
        out.target = canvas_from_ppm(tgt_ppm);
        ++index_;
        return true;
    }

    std::size_t record_index() const { return index_; }

private:
    std::string path_;
    std::ifstream f_;
    std::size_t offset_{0};
    std::size_t index_{0};
};

inline std::vector<PairRecord> read_shard(const std::string& path) {
    ShardReader reader(path);
    std::vector<PairRecord> out;
    PairRecord rec;
    while (reader.next(rec)) out.push_back(rec);
    return out;
}

// -------------------------------------------------------- balanced batches

// Strictly balanced mini-batch sampler over the categories present in the
// data. Each batch holds B/K records per category; when K does not divide B
// the remainder goes round-robin by category index, rotating the start
// category every batch. Exhausted categories reshuffle and wrap (epoch
// boundaries are recorded). Fully deterministic for a given seed.
class BalancedBatches {
public:
    BalancedBatches(std::vector<PairRecord> records, int batch_size, std::uint64_t seed)
        : records_(std::move(records)), batch_(batch_size), rng_(seed) {
        if (batch_ <= 0) throw contract_error("balanced_batches: batch size must be positive");
        for (std::size_t i = 0; i < records_.size(); ++i)
            by_cat_[static_cast<int>(records_[i].category)].push_back(i);
        for (auto& [cat, idx] : by_cat_) {
            rng_.shuffle(idx);
            cursor_[cat] = 0;
            epoch_[cat] = 0;
        }
        if (by_cat_.empty()) throw contract_error("balanced_batches: dataset is empty");
    }

    int categories_present() const { return static_cast<int>(by_cat_.size()); }
    long epochs(Category c) const {
        auto it = epoch_.find(static_cast<int>(c));
        return it == epoch_.end() ? 0 : it->second;
    }

    // Per-category record counts for batch number b (0-based).
    std::map<int, int> plan(long b) const {
        const int k = categories_present();
        const int base = batch_ / k;
        const int rem = batch_ % k;
        std::map<int, int> counts;
        int pos = 0;
        const int start = static_cast<int>((b * rem) % k);
        for (const auto& [cat, idx] : by_cat_) {
            int extra = 0;
            if (rem > 0) {
                const int rel = (pos - start + k) % k;
                extra = rel < rem ? 1 : 0;
            }
            counts[cat] = base + extra;
            ++pos;
        }
        return counts;
    }

    std::vector<const PairRecord*> next() {
        std::vector<const PairRecord*> out;
        out.reserve(static_cast<std::size_t>(batch_));
        const auto counts = plan(batch_number_);
        for (const auto& [cat, count] : counts) {
            auto& idx = by_cat_[cat];
            for (int i = 0; i < count; ++i) {
                if (cursor_[cat] == idx.size()) {
                    rng_.shuffle(idx);
                    cursor_[cat] = 0;
                    ++epoch_[cat];
                }
                out.push_back(&records_[idx[cursor_[cat]++]]);
            }
        }
        ++batch_number_;
        return out;
    }

private:
    std::vector<PairRecord> records_;
    int batch_;
    Rng rng_;
    std::map<int, std::vector<std::size_t>> by_cat_;
    std::map<int, std::size_t> cursor_;
    std::map<int, long> epoch_;
    long batch_number_{0};
};

// ----------------------------------------------------------- root splitting

struct SplitManifest {
    std::set<std::string> train_roots;
    std::set<std::string> bench_roots;
    double tau_split{0.0};
    std::size_t dropped_pairs{0};
    std::vector<std::size_t> train_records;  // indices into the input list
    std::vector<std::size_t> bench_records;
    std::string embed_source{"input_canvas"};

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["train_roots"] = train_roots;
        j["bench_roots"] = bench_roots;
        j["tau_split"] = tau_split;
        j["dropped_pairs"] = dropped_pairs;
        j["train_records"] = train_records;
        j["bench_records"] = bench_records;
        j["embed_source"] = embed_source;
        return j;
    }
};

using CanvasEmbedder = std::function<std::vector<double>(const Canvas&)>;

// Leakage-safe split: partition by root id (never by record), then drop any
// train record whose input-canvas embedding is more similar than tau_split
// to any bench record's embedding.
inline SplitManifest split_by_root(const std::vector<PairRecord>& records,
                                   const CanvasEmbedder& embedder, double tau_split,
                                   double bench_fraction, std::uint64_t seed) {
    for (const auto& r : records)
        if (r.root_id.empty()) throw contract_error("split_by_root: every record needs a root id");

    std::vector<std::string> roots;
    for (const auto& r : records)
        if (std::find(roots.begin(), roots.end(), r.root_id) == roots.end()) roots.push_back(r.root_id);

    Rng rng(seed);
    rng.shuffle(roots);
    std::size_t bench_count = static_cast<std::size_t>(bench_fraction * static_cast<double>(roots.size()));
    if (roots.size() > 1 && bench_count == 0) bench_count = 1;

    SplitManifest m;
    m.tau_split = tau_split;
    for (std::size_t i = 0; i < roots.size(); ++i)
        (i < bench_count ? m.bench_roots : m.train_roots).insert(roots[i]);

    std::vector<std::vector<double>> bench_embeddings;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (m.bench_roots.count(records[i].root_id)) {
            m.bench_records.push_back(i);
            bench_embeddings.push_back(embedder(records[i].input));
        }
    }
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (!m.train_roots.count(records[i].root_id)) continue;
        const auto e = embedder(records[i].input);
        double worst = -2.0;
        for (const auto& be : bench_embeddings) worst = std::max(worst, qc::cosine(e, be));
        if (!bench_embeddings.empty() && worst > tau_split)
            ++m.dropped_pairs;
        else
            m.train_records.push_back(i);
    }
    return m;
}

}  // namespace vispflow
