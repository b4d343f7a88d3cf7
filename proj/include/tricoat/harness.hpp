#pragma once

// Evaluation harness: nested stratified cross-validation, one-vs-one AUROC,
// paired significance testing, model training with best-checkpoint selection,
// the multi-model experiment runner, and chord-plot attention export.

#include <chrono>
#include <filesystem>
#include <future>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tricoat/cohort.hpp"
#include "tricoat/models.hpp"

namespace tricoat {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Fold planning

struct FoldPlan {
    struct InnerFold {
        std::vector<std::string> fit_ids, val_ids;
    };
    struct OuterFold {
        std::vector<std::string> test_ids, train_ids;
        std::vector<InnerFold> inner;
    };
    std::vector<OuterFold> outer;
    uint64_t seed = 0;
    std::vector<std::string> warnings;  // folds missing a class

    json to_json() const {
        json j;
        j["seed"] = seed;
        j["warnings"] = warnings;
        j["outer"] = json::array();
        for (const auto& o : outer) {
            json jo;
            jo["test_ids"] = o.test_ids;
            jo["train_ids"] = o.train_ids;
            jo["inner"] = json::array();
            for (const auto& in : o.inner)
                jo["inner"].push_back({{"fit_ids", in.fit_ids}, {"val_ids", in.val_ids}});
            j["outer"].push_back(std::move(jo));
        }
        return j;
    }

    static FoldPlan from_json(const json& j) {
        FoldPlan plan;
        plan.seed = j.at("seed").get<uint64_t>();
        plan.warnings = j.at("warnings").get<std::vector<std::string>>();
        for (const auto& jo : j.at("outer")) {
            OuterFold o;
            o.test_ids = jo.at("test_ids").get<std::vector<std::string>>();
            o.train_ids = jo.at("train_ids").get<std::vector<std::string>>();
            for (const auto& ji : jo.at("inner"))
                o.inner.push_back({ji.at("fit_ids").get<std::vector<std::string>>(),
                                   ji.at("val_ids").get<std::vector<std::string>>()});
            plan.outer.push_back(std::move(o));
        }
        return plan;
    }
};

namespace detail {

// Deals each class round-robin into n folds after a seeded shuffle, keeping
// per-fold class counts within one of each other. The dealing offset carries
// over between classes so remainders spread across folds instead of stacking
// into the first ones.
inline std::vector<std::vector<std::string>> stratified_folds(
    const std::map<std::string, int>& labels, const std::vector<std::string>& ids, int n_folds,
    Rng& rng) {
    std::map<int, std::vector<std::string>> by_class;
    for (const auto& id : ids) by_class[labels.at(id)].push_back(id);
    std::vector<std::vector<std::string>> folds(n_folds);
    size_t offset = 0;
    for (auto& [cls, members] : by_class) {
        rng.shuffle(members);
        for (size_t i = 0; i < members.size(); ++i)
            folds[(offset + i) % n_folds].push_back(members[i]);
        offset = (offset + members.size()) % n_folds;
    }
    for (auto& fold : folds) std::sort(fold.begin(), fold.end());
    return folds;
}

inline std::set<int> classes_of(const std::map<std::string, int>& labels,
                                const std::vector<std::string>& ids) {
    std::set<int> cls;
    for (const auto& id : ids) cls.insert(labels.at(id));
    return cls;
}

}  // namespace detail

inline FoldPlan make_fold_plan(const std::map<std::string, int>& labels, int n_outer = 10,
                               int n_inner = 5, uint64_t seed = 0) {
    const int n = static_cast<int>(labels.size());
    if (n_outer < 2) throw ConfigError("fold plan needs at least 2 outer folds");
    if (n_inner < 2) throw ConfigError("fold plan needs at least 2 inner folds");
    if (n_outer > n)
        throw DataError("cannot make " + std::to_string(n_outer) + " outer folds from " +
                        std::to_string(n) + " subjects");

    std::vector<std::string> all_ids;
    for (const auto& [id, cls] : labels) all_ids.push_back(id);
    std::set<int> all_classes = detail::classes_of(labels, all_ids);

    FoldPlan plan;
    plan.seed = seed;
    Rng outer_rng(derive_seed(seed, 0xF01D5ULL));
    auto test_folds = detail::stratified_folds(labels, all_ids, n_outer, outer_rng);

    for (int f = 0; f < n_outer; ++f) {
        FoldPlan::OuterFold fold;
        fold.test_ids = test_folds[f];
        std::set<std::string> in_test(fold.test_ids.begin(), fold.test_ids.end());
        for (const auto& id : all_ids)
            if (!in_test.count(id)) fold.train_ids.push_back(id);

        if (detail::classes_of(labels, fold.test_ids).size() < all_classes.size())
            plan.warnings.push_back("outer fold " + std::to_string(f) +
                                    " test set is missing at least one class");
        if (static_cast<int>(fold.train_ids.size()) < n_inner)
            throw DataError("outer fold " + std::to_string(f) + " train set too small for " +
                            std::to_string(n_inner) + " inner folds");

        Rng inner_rng(derive_seed(seed, 0x1223300ULL + static_cast<uint64_t>(f)));
        auto val_folds = detail::stratified_folds(labels, fold.train_ids, n_inner, inner_rng);
        for (int g = 0; g < n_inner; ++g) {
            FoldPlan::InnerFold inner;
            inner.val_ids = val_folds[g];
            std::set<std::string> in_val(inner.val_ids.begin(), inner.val_ids.end());
            for (const auto& id : fold.train_ids)
                if (!in_val.count(id)) inner.fit_ids.push_back(id);
            if (detail::classes_of(labels, inner.val_ids).size() < all_classes.size())
                plan.warnings.push_back("outer fold " + std::to_string(f) + " inner fold " +
                                        std::to_string(g) + " val set is missing at least one class");
            fold.inner.push_back(std::move(inner));
        }
        plan.outer.push_back(std::move(fold));
    }
    return plan;
}

// ---------------------------------------------------------------------------
// One-vs-one AUROC (pairwise average, ties count one half)

struct AurocResult {
    double value = 0.0;
    int pairs_used = 0;
    int pairs_skipped = 0;  // class pairs absent from this sample
};

namespace detail {

// A(i|j): probability that a class-i sample outranks a class-j sample on the
// class-i score column, via the rank-sum statistic with midranks for ties.
inline double auc_one_direction(const std::vector<double>& scores, const std::vector<bool>& positive) {
    const size_t n = scores.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    std::vector<double> rank(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        double mid = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (size_t t = i; t <= j; ++t) rank[order[t]] = mid;
        i = j + 1;
    }

    double rank_sum = 0.0;
    double n_pos = 0.0;
    for (size_t t = 0; t < n; ++t)
        if (positive[t]) {
            rank_sum += rank[t];
            n_pos += 1.0;
        }
    double n_neg = static_cast<double>(n) - n_pos;
    double u = rank_sum - n_pos * (n_pos + 1.0) / 2.0;
    return u / (n_pos * n_neg);
}

}  // namespace detail

inline AurocResult auroc_ovo_detail(const Mat& scores, const std::vector<int>& labels) {
    if (scores.rows() != static_cast<long>(labels.size()))
        throw DataError("auroc_ovo: scores/labels length mismatch");
    const int n_classes = static_cast<int>(scores.cols());

    std::vector<int> counts(n_classes, 0);
    for (int l : labels) {
        if (l < 0 || l >= n_classes) throw DataError("auroc_ovo: label outside score columns");
        counts[l]++;
    }

    AurocResult res;
    double total = 0.0;
    for (int i = 0; i < n_classes; ++i) {
        for (int j = i + 1; j < n_classes; ++j) {
            if (counts[i] == 0 || counts[j] == 0) {
                res.pairs_skipped++;
                continue;
            }
            std::vector<double> si, sj;
            std::vector<bool> pos_i, pos_j;
            for (size_t t = 0; t < labels.size(); ++t) {
                if (labels[t] != i && labels[t] != j) continue;
                si.push_back(scores(static_cast<long>(t), i));
                pos_i.push_back(labels[t] == i);
                sj.push_back(scores(static_cast<long>(t), j));
                pos_j.push_back(labels[t] == j);
            }
            double a_ij = detail::auc_one_direction(si, pos_i);
            double a_ji = detail::auc_one_direction(sj, pos_j);
            total += 0.5 * (a_ij + a_ji);
            res.pairs_used++;
        }
    }
    if (res.pairs_used == 0)
        throw DataError("auroc_ovo: fewer than two classes present, metric undefined");
    res.value = total / res.pairs_used;
    return res;
}

inline double auroc_ovo(const Mat& scores, const std::vector<int>& labels) {
    return auroc_ovo_detail(scores, labels).value;
}

// ---------------------------------------------------------------------------
// Paired t-test (two-sided, Student-t CDF via the incomplete beta function)

struct TTestResult {
    double t_stat = 0.0;
    double p_value = 1.0;
    bool significant = false;
};

namespace detail {

// Continued fraction for the regularized incomplete beta (Lentz's method).
inline double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-16;
    constexpr double kTiny = 1e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) return h;
    }
    throw NumericError("incomplete beta continued fraction did not converge");
}

inline double betai(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                      b * std::log(1.0 - x);
    double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

}  // namespace detail

inline TTestResult paired_ttest(const std::vector<double>& metric_a,
                                const std::vector<double>& metric_b, double alpha = 0.005) {
    if (metric_a.size() != metric_b.size())
        throw DataError("paired_ttest: unequal sample lengths");
    const int n = static_cast<int>(metric_a.size());
    if (n < 2) throw DataError("paired_ttest: needs at least 2 paired samples");

    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += metric_a[i] - metric_b[i];
    mean /= n;
    double ss = 0.0;
    for (int i = 0; i < n; ++i) {
        double d = metric_a[i] - metric_b[i] - mean;
        ss += d * d;
    }
    double sd = std::sqrt(ss / (n - 1));

    TTestResult res;
    if (sd == 0.0) {
        if (mean == 0.0) return {0.0, 1.0, false};
        res.t_stat = mean > 0 ? std::numeric_limits<double>::infinity()
                              : -std::numeric_limits<double>::infinity();
        res.p_value = 0.0;
        res.significant = true;
        return res;
    }
    res.t_stat = mean / (sd / std::sqrt(static_cast<double>(n)));
    double nu = n - 1;
    res.p_value = detail::betai(nu / 2.0, 0.5, nu / (nu + res.t_stat * res.t_stat));
    res.significant = res.p_value < alpha;
    return res;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    double lr = 1e-4;
    int epochs = 100;
    int batch_size = 32;
    double dropout = 0.1;
    uint64_t seed = 0;

    static TrainConfig from_config(const ConfigDoc& cfg) {
        TrainConfig t;
        t.lr = cfg.get_double("train.lr", 1e-4);
        t.epochs = static_cast<int>(cfg.get_int("train.epochs", 100));
        t.batch_size = static_cast<int>(cfg.get_int("train.batch_size", 32));
        t.dropout = cfg.get_double("model.dropout", 0.1);
        t.seed = static_cast<uint64_t>(cfg.get_int("train.seed", 0));
        if (t.lr < 0.0) throw ConfigError("train.lr must be >= 0");
        if (t.epochs < 1) throw ConfigError("train.epochs must be >= 1");
        if (t.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
        return t;
    }
};

struct TrainSummary {
    int best_epoch = -1;          // 1-based
    double best_val_auroc = 0.0;
    std::vector<double> epoch_losses;
    bool val_auroc_flagged = false;  // val metric fell back (single class etc.)
};

struct TrainedModel {
    AnyModel model;
    TrainSummary summary;
};

// Precomputed per-subject model inputs for one normalized cohort.
class SubjectBatch {
public:
    explicit SubjectBatch(const CohortTable& normalized) {
        for (const auto& rec : normalized.records)
            inputs_.emplace(rec.subject_id, SubjectInputs::from_record(rec));
    }

    const SubjectInputs& at(const std::string& id) const {
        auto it = inputs_.find(id);
        if (it == inputs_.end()) throw DataError("no inputs for subject " + id);
        return it->second;
    }

private:
    std::map<std::string, SubjectInputs> inputs_;
};

inline Mat score_subjects(const AnyModel& model, const SubjectBatch& batch,
                          const std::vector<std::string>& ids) {
    Mat scores(static_cast<long>(ids.size()), 3);
    for (size_t i = 0; i < ids.size(); ++i)
        scores.row(static_cast<long>(i)) = model_probs(model, batch.at(ids[i])).transpose();
    return scores;
}

inline std::vector<int> gather_labels(const std::map<std::string, int>& labels,
                                      const std::vector<std::string>& ids) {
    std::vector<int> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(labels.at(id));
    return out;
}

// Adam training over the fit subjects with per-epoch validation scoring.
// Returns the parameters from the epoch with the highest validation OvO
// AUROC; ties keep the earliest epoch.
inline TrainedModel train_model(ModelKind kind, const ModelConfig& mcfg, const TrainConfig& tcfg,
                                const SubjectBatch& batch, const std::map<std::string, int>& labels,
                                std::vector<std::string> fit_ids,
                                const std::vector<std::string>& val_ids) {
    if (fit_ids.empty()) throw DataError("train_model: empty fit set");

    TrainedModel out{init_model(kind, mcfg, derive_seed(tcfg.seed, 0x101)), {}};
    auto tensors = model_tensors(out.model);
    std::vector<Mat*> tensor_ptrs;
    for (auto& [name, m] : tensors) tensor_ptrs.push_back(m);

    AdamOptimizer adam(tcfg.lr);
    Rng shuffle_rng(derive_seed(tcfg.seed, 0x102));
    Rng dropout_rng(derive_seed(tcfg.seed, 0x103));

    std::vector<Mat> best_tensors;
    double best_val = -1.0;

    std::vector<Mat> grads(tensor_ptrs.size());
    for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        shuffle_rng.shuffle(fit_ids);
        double epoch_loss = 0.0;
        for (size_t start = 0; start < fit_ids.size(); start += tcfg.batch_size) {
            size_t stop = std::min(fit_ids.size(), start + tcfg.batch_size);
            double inv_batch = 1.0 / static_cast<double>(stop - start);
            for (size_t i = 0; i < grads.size(); ++i)
                grads[i] = Mat::Zero(tensor_ptrs[i]->rows(), tensor_ptrs[i]->cols());

            for (size_t i = start; i < stop; ++i) {
                const auto& id = fit_ids[i];
                ad::Tape t;
                ForwardOpts opts;
                opts.train = true;
                opts.dropout = tcfg.dropout;
                opts.rng = &dropout_rng;
                ad::Var logits = model_logits_graph(t, out.model, bind_inputs(t, batch.at(id)), opts);
                ad::Var loss = t.cross_entropy_logits(logits, labels.at(id));
                double loss_val = t.value(loss)(0, 0);
                if (!std::isfinite(loss_val))
                    throw NumericError("training loss became non-finite at epoch " +
                                       std::to_string(epoch) + " on subject " + id);
                epoch_loss += loss_val;
                t.backward(loss);
                for (size_t g = 0; g < tensor_ptrs.size(); ++g) {
                    const Mat* pg = t.param_gradient(*tensor_ptrs[g]);
                    if (pg) grads[g] += *pg * inv_batch;
                }
            }
            adam.step(tensor_ptrs, grads);
        }
        out.summary.epoch_losses.push_back(epoch_loss / static_cast<double>(fit_ids.size()));

        double val_score;
        if (val_ids.empty()) {
            val_score = 0.5;
            out.summary.val_auroc_flagged = true;
        } else {
            try {
                val_score = auroc_ovo(score_subjects(out.model, batch, val_ids),
                                      gather_labels(labels, val_ids));
            } catch (const DataError&) {
                val_score = 0.5;
                out.summary.val_auroc_flagged = true;
            }
        }
        if (val_score > best_val) {
            best_val = val_score;
            out.summary.best_epoch = epoch;
            best_tensors.clear();
            for (auto* m : tensor_ptrs) best_tensors.push_back(*m);
        }
    }

    out.summary.best_val_auroc = best_val;
    for (size_t i = 0; i < tensor_ptrs.size(); ++i) *tensor_ptrs[i] = best_tensors[i];
    return out;
}

inline std::string checkpoint_metadata_json(ModelKind kind, const ModelConfig& mcfg,
                                            const TrainConfig& tcfg, int fold,
                                            const TrainSummary& summary) {
    json j;
    j["model"] = model_kind_name(kind);
    j["fold"] = fold;
    j["optimizer"] = "adam";
    j["lr"] = tcfg.lr;
    j["epochs"] = tcfg.epochs;
    j["loss"] = "cross_entropy";
    j["batch_size"] = tcfg.batch_size;
    j["seed"] = tcfg.seed;
    j["dropout"] = tcfg.dropout;
    j["best_epoch"] = summary.best_epoch;
    j["val_auroc"] = summary.best_val_auroc;
    j["model_dim"] = mcfg.model_dim;
    j["layers"] = mcfg.n_layers;
    j["heads"] = mcfg.n_heads;
    j["joint_mode"] = joint_mode_name(mcfg.joint_mode);
    return j.dump();
}

// ---------------------------------------------------------------------------
// External prediction files (subject_id, score_slow, score_intermediate,
// score_fast), scored with the same folds as the trained models.

inline std::map<std::string, Eigen::RowVector3d> load_external_predictions(
    const std::filesystem::path& path) {
    auto table = read_csv(path);
    std::vector<std::string> expected = {"subject_id", "score_slow", "score_intermediate",
                                         "score_fast"};
    if (table.header != expected)
        throw DataError(path.string() +
                        ": expected header subject_id,score_slow,score_intermediate,score_fast");
    std::map<std::string, Eigen::RowVector3d> out;
    for (const auto& row : table.rows) {
        Eigen::RowVector3d v;
        for (int c = 0; c < 3; ++c) v(c) = parse_double(row[c + 1], path.string());
        if (!out.emplace(row[0], v).second)
            throw DataError(path.string() + ": duplicate subject_id '" + row[0] + "'");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Experiment runner

struct ExperimentConfig {
    std::vector<ModelKind> kinds = {ModelKind::tricoat, ModelKind::early_fusion,
                                    ModelKind::late_fusion, ModelKind::stagewise};
    ModelConfig model;
    TrainConfig train;
    int n_outer = 10;
    int n_inner = 5;
    double alpha = 0.005;
    std::vector<double> grid_lr;          // tuning grids; empty means no tuning
    std::vector<double> grid_dropout;
    std::vector<JointMode> grid_joint;
    int jobs = 1;
    std::string external_predictions;     // csv path, empty to skip

    struct Combo {
        double lr;
        double dropout;
        JointMode joint_mode;
    };

    std::vector<Combo> tuning_grid() const {
        std::vector<double> lrs = grid_lr.empty() ? std::vector<double>{train.lr} : grid_lr;
        std::vector<double> drops =
            grid_dropout.empty() ? std::vector<double>{train.dropout} : grid_dropout;
        std::vector<JointMode> joints =
            grid_joint.empty() ? std::vector<JointMode>{model.joint_mode} : grid_joint;
        std::vector<Combo> combos;
        for (double lr : lrs)
            for (double dr : drops)
                for (JointMode jm : joints) combos.push_back({lr, dr, jm});
        return combos;
    }
};

struct ModelReport {
    std::string name;
    std::vector<double> fold_auroc;
    double mean = 0.0;
    double sd = 0.0;
    double t_stat = std::numeric_limits<double>::quiet_NaN();
    double p_vs_tricoat = std::numeric_limits<double>::quiet_NaN();
    bool significant = false;
    bool auroc_pairs_skipped = false;
    double wall_seconds = 0.0;
    std::vector<std::string> chosen_combos;  // per fold, when tuning ran
};

struct MetricsReport {
    std::vector<ModelReport> models;
    uint64_t seed = 0;
    double alpha = 0.005;
    int n_outer = 0;
    std::vector<std::string> fold_warnings;
    double wall_seconds = 0.0;

    json to_json() const {
        json j;
        j["seed"] = seed;
        j["alpha"] = alpha;
        j["n_outer"] = n_outer;
        j["fold_warnings"] = fold_warnings;
        j["wall_seconds"] = wall_seconds;
        j["models"] = json::array();
        for (const auto& m : models) {
            json jm;
            jm["model"] = m.name;
            jm["fold_auroc"] = m.fold_auroc;
            jm["mean"] = m.mean;
            jm["sd"] = m.sd;
            if (std::isfinite(m.p_vs_tricoat)) {
                jm["t_stat"] = m.t_stat;
                jm["p_vs_tricoat"] = m.p_vs_tricoat;
                jm["significant"] = m.significant;
            }
            jm["auroc_pairs_skipped"] = m.auroc_pairs_skipped;
            jm["wall_seconds"] = m.wall_seconds;
            if (!m.chosen_combos.empty()) jm["chosen_combos"] = m.chosen_combos;
            j["models"].push_back(std::move(jm));
        }
        return j;
    }

    std::string to_table() const {
        char line[160];
        std::string out;
        std::snprintf(line, sizeof(line), "%-18s %-10s %-10s %-12s %s\n", "model", "mean", "sd",
                      "p_vs_tricoat", "significant");
        out += line;
        for (const auto& m : models) {
            if (std::isfinite(m.p_vs_tricoat))
                std::snprintf(line, sizeof(line), "%-18s %-10.4f %-10.4f %-12.4g %s\n",
                              m.name.c_str(), m.mean, m.sd, m.p_vs_tricoat,
                              m.significant ? "yes" : "no");
            else
                std::snprintf(line, sizeof(line), "%-18s %-10.4f %-10.4f %-12s %s\n",
                              m.name.c_str(), m.mean, m.sd, "-", "-");
            out += line;
        }
        return out;
    }
};

namespace detail {

struct FoldOutcome {
    double auroc = 0.0;
    bool pairs_skipped = false;
    std::string combo;
    AnyModel model;
    TrainSummary summary;
};

// One outer fold for one model kind: optional inner-loop tuning, final
// training with the outer-train normalizer, then test scoring.
inline FoldOutcome run_fold(ModelKind kind, const ExperimentConfig& cfg, const CohortTable& cohort,
                            const std::map<std::string, int>& labels,
                            const FoldPlan::OuterFold& fold, uint64_t fold_seed) {
    auto combos = cfg.tuning_grid();
    ExperimentConfig::Combo chosen = combos.front();

    if (combos.size() > 1) {
        double best_score = -1.0;
        for (const auto& combo : combos) {
            double mean_val = 0.0;
            int used = 0;
            for (const auto& inner : fold.inner) {
                auto stats = fit_normalizer(cohort, inner.fit_ids);
                SubjectBatch batch(apply_normalizer(cohort, stats));
                ModelConfig mcfg = cfg.model;
                mcfg.dropout = combo.dropout;
                mcfg.joint_mode = combo.joint_mode;
                TrainConfig tcfg = cfg.train;
                tcfg.lr = combo.lr;
                tcfg.dropout = combo.dropout;
                tcfg.seed = derive_seed(fold_seed, 0x7100 + used);
                auto trained = train_model(kind, mcfg, tcfg, batch, labels, inner.fit_ids,
                                           inner.val_ids);
                mean_val += trained.summary.best_val_auroc;
                ++used;
            }
            mean_val /= static_cast<double>(used);
            if (mean_val > best_score) {
                best_score = mean_val;
                chosen = combo;
            }
        }
    }

    // Final training: normalizer over the whole outer-train set, checkpoint
    // selection on the first inner validation split.
    auto stats = fit_normalizer(cohort, fold.train_ids);
    SubjectBatch batch(apply_normalizer(cohort, stats));
    ModelConfig mcfg = cfg.model;
    mcfg.dropout = chosen.dropout;
    mcfg.joint_mode = chosen.joint_mode;
    TrainConfig tcfg = cfg.train;
    tcfg.lr = chosen.lr;
    tcfg.dropout = chosen.dropout;
    tcfg.seed = derive_seed(fold_seed, 0x7200);
    auto trained = train_model(kind, mcfg, tcfg, batch, labels, fold.inner.front().fit_ids,
                               fold.inner.front().val_ids);

    FoldOutcome outcome;
    auto scores = score_subjects(trained.model, batch, fold.test_ids);
    auto res = auroc_ovo_detail(scores, gather_labels(labels, fold.test_ids));
    outcome.auroc = res.value;
    outcome.pairs_skipped = res.pairs_skipped > 0;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "lr=%g dropout=%g joint=%s", chosen.lr, chosen.dropout,
                  joint_mode_name(chosen.joint_mode));
    outcome.combo = buf;
    outcome.model = std::move(trained.model);
    outcome.summary = trained.summary;
    return outcome;
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double sample_sd(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace detail

// Trains and scores every requested model on the shared fold plan, compares
// each against Tri-COAT with a paired t-test, and scores any external
// prediction file on the identical folds.
inline MetricsReport run_experiment(const CohortTable& cohort, const std::map<std::string, int>& labels,
                                    const FoldPlan& plan, const ExperimentConfig& cfg) {
    auto t_start = std::chrono::steady_clock::now();
    MetricsReport report;
    report.seed = plan.seed;
    report.alpha = cfg.alpha;
    report.n_outer = static_cast<int>(plan.outer.size());
    report.fold_warnings = plan.warnings;

    for (size_t kind_idx = 0; kind_idx < cfg.kinds.size(); ++kind_idx) {
        ModelKind kind = cfg.kinds[kind_idx];
        auto t_model = std::chrono::steady_clock::now();
        ModelReport mr;
        mr.name = model_kind_name(kind);

        std::vector<detail::FoldOutcome> outcomes(plan.outer.size());
        auto run_one = [&](size_t f) {
            uint64_t fold_seed = derive_seed(cfg.train.seed, 1000 * (kind_idx + 1) + f);
            outcomes[f] = detail::run_fold(kind, cfg, cohort, labels, plan.outer[f], fold_seed);
        };
        if (cfg.jobs > 1) {
            std::vector<std::future<void>> futures;
            size_t next = 0;
            while (next < plan.outer.size()) {
                while (static_cast<int>(futures.size()) < cfg.jobs && next < plan.outer.size())
                    futures.push_back(std::async(std::launch::async, run_one, next++));
                for (auto& fut : futures) fut.get();
                futures.clear();
            }
        } else {
            for (size_t f = 0; f < plan.outer.size(); ++f) run_one(f);
        }

        for (auto& o : outcomes) {
            mr.fold_auroc.push_back(o.auroc);
            mr.auroc_pairs_skipped = mr.auroc_pairs_skipped || o.pairs_skipped;
            if (cfg.tuning_grid().size() > 1) mr.chosen_combos.push_back(o.combo);
        }
        mr.mean = detail::mean_of(mr.fold_auroc);
        mr.sd = detail::sample_sd(mr.fold_auroc);
        mr.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_model).count();
        report.models.push_back(std::move(mr));
    }

    if (!cfg.external_predictions.empty()) {
        auto preds = load_external_predictions(cfg.external_predictions);
        ModelReport mr;
        mr.name = "external";
        for (const auto& fold : plan.outer) {
            std::vector<std::string> missing;
            Mat scores(static_cast<long>(fold.test_ids.size()), 3);
            for (size_t i = 0; i < fold.test_ids.size(); ++i) {
                auto it = preds.find(fold.test_ids[i]);
                if (it == preds.end()) {
                    missing.push_back(fold.test_ids[i]);
                    continue;
                }
                scores.row(static_cast<long>(i)) = it->second;
            }
            if (!missing.empty())
                throw DataError("external predictions missing subjects: " + join(missing, ", "));
            auto res = auroc_ovo_detail(scores, gather_labels(labels, fold.test_ids));
            mr.fold_auroc.push_back(res.value);
            mr.auroc_pairs_skipped = mr.auroc_pairs_skipped || res.pairs_skipped > 0;
        }
        mr.mean = detail::mean_of(mr.fold_auroc);
        mr.sd = detail::sample_sd(mr.fold_auroc);
        report.models.push_back(std::move(mr));
    }

    // Paired comparisons against Tri-COAT.
    const ModelReport* tricoat_row = nullptr;
    for (const auto& m : report.models)
        if (m.name == "tricoat") tricoat_row = &m;
    if (tricoat_row) {
        for (auto& m : report.models) {
            if (m.name == "tricoat") continue;
            if (m.fold_auroc.size() != tricoat_row->fold_auroc.size() || m.fold_auroc.size() < 2)
                continue;
            auto tt = paired_ttest(tricoat_row->fold_auroc, m.fold_auroc, cfg.alpha);
            m.t_stat = tt.t_stat;
            m.p_vs_tricoat = tt.p_value;
            m.significant = tt.significant;
        }
    }

    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return report;
}

// ---------------------------------------------------------------------------
// Attention export (chord-plot data)

// Mean co-attention maps over test subjects, class tokens excluded. The
// imaging-genetics map composes the two direct maps through the shared
// clinical keys per subject before averaging.
struct AttentionMaps {
    Mat imaging_clinical;   // n_roi x n_clinical
    Mat genetics_clinical;  // n_snp x n_clinical
    Mat imaging_genetics;   // n_roi x n_snp
    int subjects = 0;
};

inline AttentionMaps average_attention(const TriCoatModel& model, const SubjectBatch& batch,
                                       const std::vector<std::string>& test_ids) {
    if (test_ids.empty()) throw DataError("export_attention: empty test set");
    const auto& cfg = model.cfg;

    AttentionMaps maps;
    maps.imaging_clinical = Mat::Zero(cfg.n_roi, cfg.n_clinical);
    maps.genetics_clinical = Mat::Zero(cfg.n_snp, cfg.n_clinical);
    maps.imaging_genetics = Mat::Zero(cfg.n_roi, cfg.n_snp);

    for (const auto& id : test_ids) {
        ad::Tape t;
        ModelCapture cap;
        model.logits_graph(t, bind_inputs(t, batch.at(id)), ForwardOpts::eval(), &cap);
        // Class-token query rows and the class-token key column sit at index
        // 0; the bottom-right corner keeps exactly the feature rows/columns.
        Mat a_i = cap.coattn_imaging.bottomRightCorner(cfg.n_roi, cfg.n_clinical);
        Mat a_g = cap.coattn_genetics.bottomRightCorner(cfg.n_snp, cfg.n_clinical);
        maps.imaging_clinical += a_i;
        maps.genetics_clinical += a_g;
        maps.imaging_genetics += a_i * a_g.transpose();
        maps.subjects++;
    }
    maps.imaging_clinical /= maps.subjects;
    maps.genetics_clinical /= maps.subjects;
    maps.imaging_genetics /= maps.subjects;
    return maps;
}

inline void write_chord_csv(const std::filesystem::path& path, const Mat& map,
                            const std::vector<std::string>& source_names,
                            const std::vector<std::string>& target_names) {
    std::vector<std::vector<std::string>> rows;
    for (long i = 0; i < map.rows(); ++i)
        for (long j = 0; j < map.cols(); ++j)
            rows.push_back({source_names[static_cast<size_t>(i)],
                            target_names[static_cast<size_t>(j)], format_double(map(i, j))});
    write_csv(path, {"source_feature", "target_feature", "mean_attention"}, rows);
}

inline void export_attention(const TriCoatModel& model, const SubjectBatch& batch,
                             const std::vector<std::string>& test_ids, const CohortSchema& schema,
                             const std::filesystem::path& out_dir) {
    auto maps = average_attention(model, batch, test_ids);
    std::filesystem::create_directories(out_dir);
    write_chord_csv(out_dir / "clinical_imaging.csv", maps.imaging_clinical, schema.roi_names,
                    schema.clinical_names);
    write_chord_csv(out_dir / "clinical_genetics.csv", maps.genetics_clinical, schema.snp_names,
                    schema.clinical_names);
    write_chord_csv(out_dir / "imaging_genetics.csv", maps.imaging_genetics, schema.roi_names,
                    schema.snp_names);
}

}  // namespace tricoat
