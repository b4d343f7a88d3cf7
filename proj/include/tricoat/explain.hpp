#pragma once

// Explanation pipeline: integrated-gradients attribution over every scalar
// input feature, absolute-contribution ranking, the 11-description prompt
// document, and an LLM transport with an offline stub mode.

#include <ctime>
#include <functional>
#include <mutex>
#include <optional>

#include <nlohmann/json.hpp>

#include "tricoat/harness.hpp"
#include "tricoat/models.hpp"

// Eigen must precede httplib: the resolver headers httplib drags in define a
// `_res` macro that collides with Eigen's matrix-product internals.
#include <httplib.h>

namespace tricoat {

// ---------------------------------------------------------------------------
// Canonical feature flattening: imaging (ROI-major, 4 traits), genetics
// (per SNP: dosage, odds ratio, rare allele frequency, intergenic), clinical.

inline std::vector<std::string> attribution_feature_names(const CohortSchema& schema) {
    std::vector<std::string> names;
    for (const auto& roi : schema.roi_names)
        for (const auto& trait : schema.trait_names) names.push_back(roi + "_" + trait);
    static const char* snp_attrs[kNumSnpAttributes] = {"dosage", "odds_ratio", "rare_allele_freq",
                                                       "intergenic"};
    for (const auto& snp : schema.snp_names)
        for (const auto* attr : snp_attrs) names.push_back(snp + "_" + attr);
    for (const auto& name : schema.clinical_names) names.push_back(name);
    return names;
}

inline std::vector<double> flatten_features(const SubjectInputs& in) {
    std::vector<double> out;
    for (long r = 0; r < in.imaging.rows(); ++r)
        for (long c = 0; c < in.imaging.cols(); ++c) out.push_back(in.imaging(r, c));
    for (long s = 0; s < in.snp_attrs.rows(); ++s)
        for (long c = 0; c < in.snp_attrs.cols(); ++c) out.push_back(in.snp_attrs(s, c));
    for (long c = 0; c < in.clinical.rows(); ++c) out.push_back(in.clinical(c, 0));
    return out;
}

// Attribution baseline: zeros for the normalized imaging and clinical
// features, zero dosage with the fixed SNP annotations kept as-is.
inline SubjectInputs make_ig_baseline(const SubjectInputs& x) {
    SubjectInputs b = x;
    b.imaging.setZero();
    b.clinical.setZero();
    b.snp_attrs.col(0).setZero();  // dosage only
    return b;
}

// Per-feature cohort statistics on the raw (pre-normalization) scale, used
// for the prompt's standard-deviation phrasing.
struct RawFeatureStats {
    std::vector<double> mean, sd;  // canonical feature order; sd 0 marks constants

    static RawFeatureStats from_cohort(const CohortTable& raw) {
        std::vector<std::vector<double>> columns;
        for (const auto& rec : raw.records) {
            auto flat = flatten_features(SubjectInputs::from_record(rec));
            if (columns.empty()) columns.resize(flat.size());
            for (size_t i = 0; i < flat.size(); ++i) columns[i].push_back(flat[i]);
        }
        RawFeatureStats stats;
        for (const auto& col : columns) {
            double m = 0.0;
            for (double v : col) m += v;
            m /= static_cast<double>(col.size());
            double ss = 0.0;
            for (double v : col) ss += (v - m) * (v - m);
            double sd = col.size() > 1 ? std::sqrt(ss / static_cast<double>(col.size() - 1)) : 0.0;
            stats.mean.push_back(m);
            stats.sd.push_back(sd);
        }
        return stats;
    }
};

// ---------------------------------------------------------------------------
// Integrated gradients

struct FeatureAttribution {
    std::string name;
    double attribution = 0.0;
    double raw_value = std::numeric_limits<double>::quiet_NaN();
    double z_score = std::numeric_limits<double>::quiet_NaN();
};

struct AttributionReport {
    std::string subject_id;
    int predicted_class = -1;
    std::string predicted_name;
    double probability = 0.0;
    int target_class = -1;
    std::vector<FeatureAttribution> features;
    double completeness_residual = 0.0;
    double output_at_input = 0.0;
    double output_at_baseline = 0.0;
    int n_steps = 0;

    json to_json() const {
        json j;
        j["subject_id"] = subject_id;
        j["predicted_class"] = predicted_class;
        j["predicted_name"] = predicted_name;
        j["probability"] = probability;
        j["target_class"] = target_class;
        j["completeness_residual"] = completeness_residual;
        j["output_at_input"] = output_at_input;
        j["output_at_baseline"] = output_at_baseline;
        j["n_steps"] = n_steps;
        j["features"] = json::array();
        for (const auto& f : features) {
            json jf;
            jf["name"] = f.name;
            jf["attribution"] = f.attribution;
            if (std::isfinite(f.raw_value)) jf["raw_value"] = f.raw_value;
            if (std::isfinite(f.z_score)) jf["z_score"] = f.z_score;
            j["features"].push_back(std::move(jf));
        }
        return j;
    }

    static AttributionReport from_json(const json& j) {
        AttributionReport r;
        r.subject_id = j.at("subject_id").get<std::string>();
        r.predicted_class = j.at("predicted_class").get<int>();
        r.predicted_name = j.at("predicted_name").get<std::string>();
        r.probability = j.at("probability").get<double>();
        r.target_class = j.at("target_class").get<int>();
        r.completeness_residual = j.at("completeness_residual").get<double>();
        r.output_at_input = j.at("output_at_input").get<double>();
        r.output_at_baseline = j.at("output_at_baseline").get<double>();
        r.n_steps = j.at("n_steps").get<int>();
        for (const auto& jf : j.at("features")) {
            FeatureAttribution f;
            f.name = jf.at("name").get<std::string>();
            f.attribution = jf.at("attribution").get<double>();
            if (jf.contains("raw_value")) f.raw_value = jf.at("raw_value").get<double>();
            if (jf.contains("z_score")) f.z_score = jf.at("z_score").get<double>();
            r.features.push_back(std::move(f));
        }
        return r;
    }
};

// Forward builder: returns the 1 x 3 logits node for bound inputs.
using ForwardBuilder = std::function<ad::Var(ad::Tape&, const InputVars&)>;

struct IgResult {
    Mat imaging, snp_attrs, clinical;  // per-entry attributions
    double sum = 0.0;
    double output_at_input = 0.0;
    double output_at_baseline = 0.0;
    double completeness_residual = 0.0;
};

// Midpoint-rule path integral of the target logit's input gradient:
//   IG_i = (x_i - x'_i) * mean_s dF/dx_i at x' + (s-1/2)/n (x - x').
inline IgResult integrated_gradients_core(const ForwardBuilder& forward, const SubjectInputs& x,
                                          const SubjectInputs& baseline, int target_class,
                                          int n_steps) {
    if (n_steps < 1) throw ConfigError("integrated gradients needs n_steps >= 1");

    Mat d_img = x.imaging - baseline.imaging;
    Mat d_snp = x.snp_attrs - baseline.snp_attrs;
    Mat d_cli = x.clinical - baseline.clinical;

    Mat g_img = Mat::Zero(x.imaging.rows(), x.imaging.cols());
    Mat g_snp = Mat::Zero(x.snp_attrs.rows(), x.snp_attrs.cols());
    Mat g_cli = Mat::Zero(x.clinical.rows(), x.clinical.cols());

    auto logit_at = [&](const SubjectInputs& point, Mat* gi, Mat* gs, Mat* gc) {
        ad::Tape t;
        InputVars vars = bind_inputs(t, point, gi != nullptr);
        ad::Var logits = forward(t, vars);
        ad::Var target = t.slice_cols(logits, target_class, 1);
        if (gi) {
            t.backward(target);
            *gi = t.gradient(vars.imaging);
            *gs = t.gradient(vars.snp_attrs);
            *gc = t.gradient(vars.clinical);
        }
        return t.value(target)(0, 0);
    };

    for (int s = 1; s <= n_steps; ++s) {
        double alpha = (static_cast<double>(s) - 0.5) / static_cast<double>(n_steps);
        SubjectInputs point = baseline;
        point.imaging += alpha * d_img;
        point.snp_attrs += alpha * d_snp;
        point.clinical += alpha * d_cli;
        Mat gi, gs, gc;
        logit_at(point, &gi, &gs, &gc);
        if (!gi.allFinite() || !gs.allFinite() || !gc.allFinite())
            throw NumericError("integrated gradients: non-finite gradient at step " +
                               std::to_string(s));
        g_img += gi;
        g_snp += gs;
        g_cli += gc;
    }

    IgResult res;
    res.imaging = d_img.cwiseProduct(g_img / n_steps);
    res.snp_attrs = d_snp.cwiseProduct(g_snp / n_steps);
    res.clinical = d_cli.cwiseProduct(g_cli / n_steps);
    res.sum = res.imaging.sum() + res.snp_attrs.sum() + res.clinical.sum();
    res.output_at_input = logit_at(x, nullptr, nullptr, nullptr);
    res.output_at_baseline = logit_at(baseline, nullptr, nullptr, nullptr);
    res.completeness_residual = std::abs(res.sum - (res.output_at_input - res.output_at_baseline));
    return res;
}

// Full attribution report for one subject. `x_norm` is the model-facing
// (normalized) view, `raw` the pre-normalization record for z-scores.
inline AttributionReport integrated_gradients(const AnyModel& model, const std::string& subject_id,
                                              const SubjectInputs& x_norm, const SubjectInputs& raw,
                                              const RawFeatureStats& stats,
                                              const CohortSchema& schema, int n_steps = 256,
                                              int target_class = -1) {
    Eigen::Vector3d probs = model_probs(model, x_norm);
    int predicted = 0;
    probs.maxCoeff(&predicted);
    int target = target_class < 0 ? predicted : target_class;

    auto forward = [&](ad::Tape& t, const InputVars& vars) {
        return model_logits_graph(t, model, vars);
    };
    auto ig = integrated_gradients_core(forward, x_norm, make_ig_baseline(x_norm), target, n_steps);

    AttributionReport report;
    report.subject_id = subject_id;
    report.predicted_class = predicted;
    report.predicted_name = subtype_names()[static_cast<size_t>(predicted)];
    report.probability = probs(predicted);
    report.target_class = target;
    report.completeness_residual = ig.completeness_residual;
    report.output_at_input = ig.output_at_input;
    report.output_at_baseline = ig.output_at_baseline;
    report.n_steps = n_steps;

    auto names = attribution_feature_names(schema);
    SubjectInputs attributions;
    attributions.imaging = ig.imaging;
    attributions.snp_attrs = ig.snp_attrs;
    attributions.clinical = ig.clinical;
    attributions.chromosomes = x_norm.chromosomes;
    auto flat_attr = flatten_features(attributions);
    auto flat_raw = flatten_features(raw);
    if (names.size() != flat_attr.size() || names.size() != stats.mean.size())
        throw DataError("attribution feature count mismatch against schema");

    for (size_t i = 0; i < names.size(); ++i) {
        FeatureAttribution f;
        f.name = names[i];
        f.attribution = flat_attr[i];
        f.raw_value = flat_raw[i];
        if (stats.sd[i] > 0.0) f.z_score = (flat_raw[i] - stats.mean[i]) / stats.sd[i];
        report.features.push_back(std::move(f));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Salient-feature ranking

struct RankedFeatures {
    std::vector<FeatureAttribution> features;
    std::vector<std::string> warnings;
};

// Descending |attribution|, ties broken by canonical feature name.
inline RankedFeatures rank_salient_features(const AttributionReport& report, int top_k = 10) {
    RankedFeatures out;
    out.features = report.features;
    std::sort(out.features.begin(), out.features.end(),
              [](const FeatureAttribution& a, const FeatureAttribution& b) {
                  double aa = std::abs(a.attribution), ab = std::abs(b.attribution);
                  if (aa != ab) return aa > ab;
                  return a.name < b.name;
              });
    if (top_k > static_cast<int>(out.features.size())) {
        out.warnings.push_back("requested top " + std::to_string(top_k) + " of only " +
                               std::to_string(out.features.size()) + " features");
    } else {
        out.features.resize(top_k);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Prompt document: one risk-assessment description plus one description per
// salient feature (eleven segments with the default top ten).

struct PromptTemplate {
    std::string risk_template =
        "A machine learning model for neurodegenerative disease subtyping assessed this patient "
        "as belonging to the {subtype} cognitive decline subtype with probability {probability}; "
        "please explain what the following measurements suggest about this assessment.";
    std::string feature_template =
        "{rank}. The patient's {feature} is {z_abs} standard deviations {direction} than the "
        "population average (model attribution {attribution}).";
    std::string missing_deviation_template =
        "{rank}. The patient's {feature} was flagged as salient (model attribution {attribution}); "
        "deviation unavailable.";

    // Template files use the configuration document format with the keys
    // risk_template / feature_template / missing_deviation_template.
    static PromptTemplate load(const std::filesystem::path& path) {
        auto doc = ConfigDoc::load(path.string());
        PromptTemplate t;
        t.risk_template = doc.get_string("risk_template", t.risk_template);
        t.feature_template = doc.get_string("feature_template", t.feature_template);
        t.missing_deviation_template =
            doc.get_string("missing_deviation_template", t.missing_deviation_template);
        return t;
    }
};

struct PromptDocument {
    std::vector<std::string> segments;
    std::string text;
    std::vector<std::string> warnings;
};

namespace detail {

inline std::string replace_all(std::string s, const std::string& from, const std::string& to) {
    size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
    return s;
}

inline std::string format_compact(double v, int precision = 3) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
    return std::string(buf);
}

}  // namespace detail

inline PromptDocument build_prompt(const RankedFeatures& ranked, const std::string& subtype,
                                   double probability, const PromptTemplate& tpl = {}) {
    PromptDocument doc;
    doc.warnings = ranked.warnings;
    if (ranked.features.size() != 10)
        doc.warnings.push_back("prompt built from " + std::to_string(ranked.features.size()) +
                               " features instead of 10");

    char prob[16];
    std::snprintf(prob, sizeof(prob), "%.2f", probability);
    std::string risk = detail::replace_all(tpl.risk_template, "{subtype}", subtype);
    risk = detail::replace_all(risk, "{probability}", prob);
    doc.segments.push_back(risk);

    int rank = 1;
    for (const auto& f : ranked.features) {
        const bool has_z = std::isfinite(f.z_score);
        std::string seg = has_z ? tpl.feature_template : tpl.missing_deviation_template;
        seg = detail::replace_all(seg, "{rank}", std::to_string(rank));
        seg = detail::replace_all(seg, "{feature}", f.name);
        if (has_z) {
            seg = detail::replace_all(seg, "{z_abs}", detail::format_compact(std::abs(f.z_score)));
            seg = detail::replace_all(seg, "{direction}", f.z_score >= 0.0 ? "higher" : "lower");
        }
        seg = detail::replace_all(seg, "{attribution}", detail::format_compact(f.attribution));
        doc.segments.push_back(seg);
        ++rank;
    }
    doc.text = join(doc.segments, "\n");
    return doc;
}

// ---------------------------------------------------------------------------
// LLM client: stub mode answers from a canned transcript keyed by prompt
// hash; live mode posts to a chat-completion endpoint. Both append to a
// JSON-lines audit log.

struct LLMClientConfig {
    std::string mode = "stub";  // stub | live
    std::string model = "gpt-3.5-turbo";
    int timeout_s = 30;
    int retries = 3;
    std::string stub_transcript_path;
    std::string audit_log_path;
    std::string endpoint;  // from TRICOAT_LLM_ENDPOINT
    std::string api_key;   // from TRICOAT_LLM_API_KEY, never from config files

    static LLMClientConfig from_config(const ConfigDoc& cfg,
                                       const std::filesystem::path& out_dir) {
        LLMClientConfig c;
        c.mode = cfg.get_string("llm.mode", "stub");
        if (c.mode != "stub" && c.mode != "live")
            throw ConfigError("llm.mode must be 'stub' or 'live'");
        c.model = cfg.get_string("llm.model", c.model);
        c.timeout_s = static_cast<int>(cfg.get_int("llm.timeout_s", 30));
        c.retries = static_cast<int>(cfg.get_int("llm.retries", 3));
        c.stub_transcript_path = cfg.get_string("llm.stub_transcript", "");
        c.audit_log_path = cfg.get_string("llm.audit_log", (out_dir / "audit_log.jsonl").string());
        if (const char* ep = std::getenv("TRICOAT_LLM_ENDPOINT")) c.endpoint = ep;
        if (const char* key = std::getenv("TRICOAT_LLM_API_KEY")) c.api_key = key;
        return c;
    }
};

struct LLMResponse {
    std::string text;
    std::string prompt_hash;
    std::string mode;
    bool stub_miss = false;
    int attempts = 1;
};

inline std::string utc_timestamp() {
    std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    return std::string(buf);
}

class LLMClient {
public:
    explicit LLMClient(LLMClientConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.mode == "stub" && !cfg_.stub_transcript_path.empty() &&
            std::filesystem::exists(cfg_.stub_transcript_path)) {
            auto j = json::parse(read_text_file(cfg_.stub_transcript_path));
            for (auto it = j.begin(); it != j.end(); ++it)
                transcript_[it.key()] = it.value().get<std::string>();
        }
    }

    LLMResponse send_prompt(const std::string& prompt_text) {
        // Requests serialize per client; the audit log stays append-ordered.
        std::lock_guard<std::mutex> lock(mutex_);
        LLMResponse res;
        res.prompt_hash = hex64(fnv1a64(prompt_text));
        res.mode = cfg_.mode;
        if (cfg_.mode == "stub") {
            auto it = transcript_.find(res.prompt_hash);
            if (it != transcript_.end()) {
                res.text = it->second;
            } else {
                res.stub_miss = true;
                res.text = "[stub] no canned response for prompt " + res.prompt_hash;
            }
        } else {
            res = send_live(prompt_text, res);
        }
        audit(prompt_text, res);
        return res;
    }

private:
    LLMResponse send_live(const std::string& prompt_text, LLMResponse res) {
        if (cfg_.endpoint.empty())
            throw ConfigError("live LLM mode needs TRICOAT_LLM_ENDPOINT");
        auto slash = cfg_.endpoint.find('/', cfg_.endpoint.find("://") + 3);
        std::string base = slash == std::string::npos ? cfg_.endpoint : cfg_.endpoint.substr(0, slash);
        std::string path = slash == std::string::npos ? "/" : cfg_.endpoint.substr(slash);

        json body;
        body["model"] = cfg_.model;
        body["messages"] = json::array({{{"role", "user"}, {"content", prompt_text}}});

        std::string last_error;
        for (int attempt = 1; attempt <= std::max(1, cfg_.retries); ++attempt) {
            res.attempts = attempt;
            httplib::Client client(base);
            client.set_connection_timeout(cfg_.timeout_s);
            client.set_read_timeout(cfg_.timeout_s);
            httplib::Headers headers;
            if (!cfg_.api_key.empty())
                headers.emplace("Authorization", "Bearer " + cfg_.api_key);
            auto reply = client.Post(path, headers, body.dump(), "application/json");
            if (!reply) {
                last_error = "transport error: " + httplib::to_string(reply.error());
                continue;
            }
            if (reply->status != 200) {
                last_error = "http status " + std::to_string(reply->status);
                continue;
            }
            auto j = json::parse(reply->body, nullptr, false);
            if (j.is_discarded() || !j.contains("choices") || j["choices"].empty()) {
                last_error = "malformed completion payload";
                continue;
            }
            res.text = j["choices"][0]["message"]["content"].get<std::string>();
            return res;
        }
        throw DataError("LLM request failed after " + std::to_string(std::max(1, cfg_.retries)) +
                        " attempts: " + last_error);
    }

    void audit(const std::string& prompt_text, const LLMResponse& res) {
        if (cfg_.audit_log_path.empty()) return;
        json line;
        line["timestamp"] = utc_timestamp();
        line["mode"] = res.mode;
        line["model"] = cfg_.model;
        line["prompt_hash"] = res.prompt_hash;
        line["prompt"] = prompt_text;
        line["response"] = res.text;
        line["stub_miss"] = res.stub_miss;
        line["attempts"] = res.attempts;
        std::filesystem::path p(cfg_.audit_log_path);
        if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
        std::ofstream out(p, std::ios::app);
        out << line.dump() << "\n";
    }

    LLMClientConfig cfg_;
    std::map<std::string, std::string> transcript_;
    std::mutex mutex_;
};

}  // namespace tricoat
