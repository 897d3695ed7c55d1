#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vispflow/errors.hpp"
#include "vispflow/model.hpp"
#include "vispflow/train.hpp"

namespace vispflow {

// key=value run configuration. Every key any command consumes is registered
// here with its default; unknown keys are rejected so typos cannot silently
// fall back to defaults. The effective config is echoed into each run's
// output directory.
class RunConfig {
public:
    RunConfig() {
        // model
        set_default("image_side", "64");
        set_default("patch", "8");
        set_default("width", "64");
        set_default("enc_width", "96");
        set_default("layers", "2");
        set_default("heads", "4");
        set_default("time_embed_dim", "128");
        set_default("sigma_min", "0.001");
        set_default("beta1", "0.01");
        set_default("beta2", "1.0");
        set_default("p_drop", "0.1");
        set_default("cfg_scale", "7.0");
        set_default("steps", "50");
        set_default("tau_init", "0.07");
        set_default("tau_frozen", "false");
        // training
        set_default("train_steps", "2000");
        set_default("batch", "64");
        set_default("lr", "0.001");
        set_default("warmup", "100");
        set_default("weight_decay", "0.0");
        set_default("ckpt_every", "500");
        set_default("seed", "0");
        // data
        set_default("pairs_per_category", "64");
        set_default("categories", "C2I,T2I,TIE,TBE,VME,DE,FU,TU");
        set_default("bench_fraction", "0.1");
        set_default("tau_split", "0.92");
        // qc
        set_default("tau_ocr", "0.05");
        set_default("tau_div", "0.92");
        set_default("retention_threshold", "1.0");
        // render
        set_default("font_threshold", "0.05");
        set_default("size_min", "8");
        set_default("size_max", "72");
        set_default("arrow_len_min", "20");
        set_default("arrow_len_max", "100");
        // runtime
        set_default("threads", "1");
    }

    static RunConfig from_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw config_error("cannot open config file: " + path);
        std::stringstream ss;
        ss << f.rdbuf();
        RunConfig cfg;
        cfg.merge_text(ss.str(), path);
        return cfg;
    }

    void merge_text(const std::string& text, const std::string& origin = "<config>") {
        std::istringstream in(text);
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const std::size_t hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            const auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                const auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw config_error(origin + ":" + std::to_string(line_no) + ": expected key=value");
            set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }

    void set(const std::string& key, const std::string& value) {
        auto it = values_.find(key);
        if (it == values_.end()) throw config_error("unknown config key: " + key);
        it->second = value;
    }

    const std::string& get(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw config_error("unknown config key: " + key);
        return it->second;
    }

    long get_int(const std::string& key) const {
        try {
            return std::stol(get(key));
        } catch (const std::exception&) {
            throw config_error("config key " + key + " is not an integer: " + get(key));
        }
    }
    double get_double(const std::string& key) const {
        try {
            return std::stod(get(key));
        } catch (const std::exception&) {
            throw config_error("config key " + key + " is not a number: " + get(key));
        }
    }
    bool get_bool(const std::string& key) const {
        const std::string& v = get(key);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw config_error("config key " + key + " is not a boolean: " + v);
    }
    std::uint64_t get_seed() const { return static_cast<std::uint64_t>(get_int("seed")); }

    std::vector<Category> get_categories() const {
        std::vector<Category> out;
        std::istringstream in(get("categories"));
        std::string tag;
        while (std::getline(in, tag, ',')) out.push_back(category_from_string(tag));
        if (out.empty()) throw config_error("categories must list at least one tag");
        return out;
    }

    ModelConfig model_config() const {
        ModelConfig m;
        m.image_side = static_cast<int>(get_int("image_side"));
        m.patch = static_cast<int>(get_int("patch"));
        m.width = static_cast<int>(get_int("width"));
        m.enc_width = static_cast<int>(get_int("enc_width"));
        m.layers = static_cast<int>(get_int("layers"));
        m.heads = static_cast<int>(get_int("heads"));
        m.time_embed_dim = static_cast<int>(get_int("time_embed_dim"));
        m.sigma_min = get_double("sigma_min");
        m.beta_kld = get_double("beta1");
        m.beta_clip = get_double("beta2");
        m.p_drop = get_double("p_drop");
        m.cfg_scale = get_double("cfg_scale");
        m.sampler_steps = static_cast<int>(get_int("steps"));
        m.tau_init = get_double("tau_init");
        m.tau_frozen = get_bool("tau_frozen");
        m.validate();
        return m;
    }

    TrainConfig train_config() const {
        TrainConfig t;
        t.steps = get_int("train_steps");
        t.batch = static_cast<int>(get_int("batch"));
        t.lr = get_double("lr");
        t.warmup = get_int("warmup");
        t.weight_decay = get_double("weight_decay");
        t.ckpt_every = get_int("ckpt_every");
        t.seed = get_seed();
        return t;
    }

    // Canonical snapshot: sorted key=value lines.
    std::string snapshot() const {
        std::string out;
        for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
        return out;
    }

private:
    void set_default(const std::string& key, const std::string& value) { values_[key] = value; }
    std::map<std::string, std::string> values_;
};

}  // namespace vispflow
