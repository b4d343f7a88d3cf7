#pragma once

// Plain-text key/value configuration document. One document drives every
// pipeline stage; CLI flags override individual keys. Unknown keys are a
// hard error so typos never silently fall back to defaults.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tricoat/common.hpp"

namespace tricoat {

class ConfigDoc {
public:
    ConfigDoc() = default;

    static ConfigDoc parse(const std::string& text, const std::string& origin = "<config>") {
        ConfigDoc doc;
        doc.origin_ = origin;
        int line_no = 0;
        for (const auto& raw : split(text, '\n')) {
            ++line_no;
            std::string line = trim(raw);
            if (line.empty() || line[0] == '#') continue;
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(line_no) +
                                  ": expected 'key = value', got '" + line + "'");
            std::string key = trim(line.substr(0, eq));
            std::string value = trim(line.substr(eq + 1));
            if (key.empty())
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
            if (doc.values_.count(key))
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
            doc.values_[key] = value;
        }
        return doc;
    }

    static ConfigDoc load(const std::string& path) {
        return parse(read_text_file(path), path);
    }

    void set(const std::string& key, const std::string& value) {
        values_[key] = value;
    }

    bool has(const std::string& key) const {
        return values_.count(key) != 0;
    }

    std::string get_string(const std::string& key, const std::string& def) const {
        touch(key);
        auto it = values_.find(key);
        return it == values_.end() ? def : it->second;
    }

    long get_int(const std::string& key, long def) const {
        touch(key);
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        try {
            size_t pos = 0;
            long v = std::stol(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument(it->second);
            return v;
        } catch (const std::exception&) {
            throw ConfigError(origin_ + ": key '" + key + "' is not an integer: '" + it->second + "'");
        }
    }

    double get_double(const std::string& key, double def) const {
        touch(key);
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        try {
            size_t pos = 0;
            double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument(it->second);
            return v;
        } catch (const std::exception&) {
            throw ConfigError(origin_ + ": key '" + key + "' is not a number: '" + it->second + "'");
        }
    }

    bool get_bool(const std::string& key, bool def) const {
        touch(key);
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        const std::string& v = it->second;
        if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
        if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        throw ConfigError(origin_ + ": key '" + key + "' is not a boolean: '" + v + "'");
    }

    // Comma-separated list; empty value means empty list.
    std::vector<std::string> get_list(const std::string& key,
                                      const std::vector<std::string>& def = {}) const {
        touch(key);
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        if (trim(it->second).empty()) return {};
        std::vector<std::string> out;
        for (auto& part : split(it->second, ',')) out.push_back(trim(part));
        return out;
    }

    std::vector<double> get_double_list(const std::string& key,
                                        const std::vector<double>& def = {}) const {
        touch(key);
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        std::vector<double> out;
        for (auto& part : get_list(key)) {
            try {
                out.push_back(std::stod(part));
            } catch (const std::exception&) {
                throw ConfigError(origin_ + ": key '" + key + "' has a non-numeric entry: '" + part + "'");
            }
        }
        return out;
    }

    // Every key that was never read through a getter. Called after a stage
    // has pulled its configuration; leftovers are misspellings.
    std::vector<std::string> unknown_keys(const std::set<std::string>& known) const {
        std::vector<std::string> out;
        for (const auto& [key, value] : values_)
            if (!known.count(key)) out.push_back(key);
        return out;
    }

    void require_known(const std::set<std::string>& known) const {
        auto unknown = unknown_keys(known);
        if (!unknown.empty())
            throw ConfigError(origin_ + ": unknown configuration key(s): " + join(unknown, ", "));
    }

    const std::map<std::string, std::string>& entries() const { return values_; }
    const std::string& origin() const { return origin_; }

private:
    void touch(const std::string&) const {}

    std::string origin_ = "<config>";
    std::map<std::string, std::string> values_;
};

// Full registry of configuration keys recognized by any stage. Kept in one
// place so require_known() can reject typos document-wide.
inline const std::set<std::string>& known_config_keys() {
    static const std::set<std::string> keys = {
        "out_dir",
        "io.cohort_dir",
        // schema
        "schema.n_roi", "schema.n_snp", "schema.n_clinical",
        "schema.roi_names", "schema.trait_names", "schema.snp_names", "schema.clinical_names",
        // labels
        "labels.k", "labels.seed", "labels.restarts",
        // model
        "model.dim", "model.layers", "model.heads", "model.ff_hidden", "model.dropout",
        "model.use_class_tokens", "model.joint_mode", "model.classifier_hidden",
        "model.coattn_identity_init",
        // training / evaluation
        "train.lr", "train.epochs", "train.batch_size", "train.seed", "train.alpha",
        "train.outer_folds", "train.inner_folds", "train.jobs",
        "train.grid.lr", "train.grid.dropout", "train.grid.joint_mode",
        "evaluate.models", "evaluate.external_predictions",
        // synthetic cohorts
        "synth.n_subjects", "synth.proportions", "synth.seed",
        "synth.noise", "synth.mmse_noise",
        "synth.signal.imaging", "synth.signal.genetics", "synth.signal.clinical",
        "synth.interaction", "synth.interaction_pairs",
        // explanation
        "explain.ig_steps", "explain.top_k", "explain.template_path",
        "llm.mode", "llm.model", "llm.timeout_s", "llm.retries",
        "llm.stub_transcript", "llm.audit_log",
    };
    return keys;
}

}  // namespace tricoat
