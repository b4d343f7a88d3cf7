#pragma once

// Cohort ingestion and label construction. Subjects are aligned across the
// four modality files, trajectory labels come from k-means over MMSE deltas,
// and normalization statistics are fitted strictly on training rows.

#include <Eigen/Core>
#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tricoat/common.hpp"
#include "tricoat/config.hpp"
#include "tricoat/csv.hpp"

namespace tricoat {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

constexpr int kNumImagingTraits = 4;
constexpr int kNumSnpAttributes = 4;   // dosage, odds ratio, rare allele freq, intergenic
constexpr int kNumChromosomes = 23;    // 1..22 plus X encoded as 23
constexpr int kNumVisits = 4;          // baseline, m06, m12, m24

inline const std::array<const char*, kNumVisits>& visit_names() {
    static const std::array<const char*, kNumVisits> names = {"bl", "m06", "m12", "m24"};
    return names;
}

struct SnpRecord {
    int dosage = 0;            // minor-allele count, 0..2
    double odds_ratio = 1.0;   // > 0
    double rare_allele_freq = 0.0;  // [0,1]
    int intergenic = 0;        // binary
    int chromosome = 1;        // 1..23
};

struct SubjectRecord {
    std::string subject_id;
    Mat imaging;                      // n_roi x 4
    std::vector<SnpRecord> genetics;  // n_snp entries
    Vec clinical;                     // n_clinical
    std::array<int, kNumVisits> mmse{};  // scores 0..30
};

struct CohortSchema {
    std::vector<std::string> roi_names;
    std::vector<std::string> trait_names;
    std::vector<std::string> snp_names;
    std::vector<std::string> clinical_names;

    int n_roi() const { return static_cast<int>(roi_names.size()); }
    int n_snp() const { return static_cast<int>(snp_names.size()); }
    int n_clinical() const { return static_cast<int>(clinical_names.size()); }

    static CohortSchema defaults(int n_roi = 72, int n_snp = 70, int n_clinical = 7) {
        CohortSchema s;
        s.trait_names = {"ThickAvg", "ThickStd", "SurfArea", "Volume"};
        for (int i = 1; i <= n_roi; ++i) {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "ROI_%02d", i);
            s.roi_names.emplace_back(buf);
        }
        for (int i = 1; i <= n_snp; ++i) {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "SNP_%02d", i);
            s.snp_names.emplace_back(buf);
        }
        static const char* clin[7] = {"LDELTOTAL", "DIGITSCOR",       "TRABSCOR",
                                      "RAVLT_immediate", "RAVLT_learning",
                                      "RAVLT_forgetting", "RAVLT_perc_forgetting"};
        for (int i = 0; i < n_clinical; ++i) {
            if (i < 7) {
                s.clinical_names.emplace_back(clin[i]);
            } else {
                char buf[16];
                std::snprintf(buf, sizeof(buf), "CLIN_%02d", i + 1);
                s.clinical_names.emplace_back(buf);
            }
        }
        return s;
    }

    static CohortSchema from_config(const ConfigDoc& cfg) {
        int n_roi = static_cast<int>(cfg.get_int("schema.n_roi", 72));
        int n_snp = static_cast<int>(cfg.get_int("schema.n_snp", 70));
        int n_clin = static_cast<int>(cfg.get_int("schema.n_clinical", 7));
        CohortSchema s = defaults(n_roi, n_snp, n_clin);
        if (cfg.has("schema.roi_names")) s.roi_names = cfg.get_list("schema.roi_names");
        if (cfg.has("schema.trait_names")) s.trait_names = cfg.get_list("schema.trait_names");
        if (cfg.has("schema.snp_names")) s.snp_names = cfg.get_list("schema.snp_names");
        if (cfg.has("schema.clinical_names")) s.clinical_names = cfg.get_list("schema.clinical_names");
        if (s.trait_names.size() != kNumImagingTraits)
            throw ConfigError("schema.trait_names must have exactly 4 entries");
        if (s.roi_names.empty() || s.snp_names.empty() || s.clinical_names.empty())
            throw ConfigError("schema name lists must be non-empty");
        return s;
    }

    // Column layouts of the four modality CSVs. subject_id always first.
    std::vector<std::string> imaging_columns() const {
        std::vector<std::string> cols = {"subject_id"};
        for (const auto& roi : roi_names)
            for (const auto& trait : trait_names) cols.push_back(roi + "_" + trait);
        return cols;
    }
    std::vector<std::string> genetics_columns() const {
        std::vector<std::string> cols = {"subject_id"};
        for (const auto& snp : snp_names) {
            cols.push_back(snp);
            cols.push_back(snp + "_or");
            cols.push_back(snp + "_raf");
            cols.push_back(snp + "_intergenic");
            cols.push_back(snp + "_chr");
        }
        return cols;
    }
    std::vector<std::string> clinical_columns() const {
        std::vector<std::string> cols = {"subject_id"};
        for (const auto& name : clinical_names) cols.push_back(name);
        return cols;
    }
    std::vector<std::string> mmse_columns() const {
        std::vector<std::string> cols = {"subject_id"};
        for (const auto* v : visit_names()) cols.push_back(std::string("mmse_") + v);
        return cols;
    }
};

struct IngestionReport {
    struct Entry {
        std::string subject_id;
        std::string reason;
    };
    std::vector<Entry> dropped;

    std::string to_json() const {
        std::string out = "[";
        for (size_t i = 0; i < dropped.size(); ++i) {
            if (i) out += ",";
            out += "\n  {\"subject_id\": \"" + dropped[i].subject_id + "\", \"reason\": \"" +
                   dropped[i].reason + "\"}";
        }
        out += dropped.empty() ? "]" : "\n]";
        return out + "\n";
    }
};

struct CohortTable {
    std::vector<SubjectRecord> records;
    CohortSchema schema;
    std::optional<std::map<std::string, int>> labels;  // subject_id -> class index

    int size() const { return static_cast<int>(records.size()); }

    const SubjectRecord& by_id(const std::string& id) const {
        for (const auto& r : records)
            if (r.subject_id == id) return r;
        throw DataError("unknown subject_id: " + id);
    }

    std::vector<std::string> subject_ids() const {
        std::vector<std::string> ids;
        ids.reserve(records.size());
        for (const auto& r : records) ids.push_back(r.subject_id);
        return ids;
    }
};

struct DeltaTrajectory {
    std::string subject_id;
    Eigen::Vector3d deltas;  // m06, m12, m24 minus baseline; implicit start at 0
};

inline const std::array<const char*, 3>& subtype_names() {
    static const std::array<const char*, 3> names = {"slow", "intermediate", "fast"};
    return names;
}

struct LabelSet {
    std::map<std::string, int> assignments;       // subject_id -> 0 slow, 1 intermediate, 2 fast
    std::array<std::string, 3> class_names = {"slow", "intermediate", "fast"};
    Mat centroids;                                // 3 x 3, rows ordered slow/intermediate/fast

    std::string to_json() const;
};

// ---------------------------------------------------------------------------
// Ingestion

namespace detail {

inline void check_columns(const CsvTable& table, const std::vector<std::string>& expected,
                          const std::string& file) {
    std::set<std::string> have(table.header.begin(), table.header.end());
    std::set<std::string> want(expected.begin(), expected.end());
    std::vector<std::string> missing, extra;
    for (const auto& c : want)
        if (!have.count(c)) missing.push_back(c);
    for (const auto& c : have)
        if (!want.count(c)) extra.push_back(c);
    if (!missing.empty() || !extra.empty()) {
        std::string msg = file + ": column mismatch vs schema;";
        if (!missing.empty()) msg += " missing [" + join(missing, ", ") + "]";
        if (!extra.empty()) msg += " unexpected [" + join(extra, ", ") + "]";
        throw DataError(msg);
    }
    if (table.header.empty() || table.header[0] != "subject_id")
        throw DataError(file + ": first column must be subject_id");
}

inline std::map<std::string, const std::vector<std::string>*> index_rows(const CsvTable& table,
                                                                         const std::string& file) {
    std::map<std::string, const std::vector<std::string>*> idx;
    for (const auto& row : table.rows) {
        if (!idx.emplace(row[0], &row).second)
            throw DataError(file + ": duplicate subject_id '" + row[0] + "'");
    }
    return idx;
}

inline int parse_chromosome(const std::string& s, const std::string& context) {
    if (s == "X" || s == "x") return 23;
    long v = parse_long(s, context);
    if (v < 1 || v > kNumChromosomes)
        throw DataError("unknown chromosome '" + s + "' in " + context + "; expected 1-22 or X");
    return static_cast<int>(v);
}

}  // namespace detail

// Intersects subjects across the four files; keeps only complete, in-range
// records. Subjects failing a value check are dropped with a reason, but a
// chromosome outside the vocabulary aborts ingestion.
inline CohortTable load_cohort(const std::filesystem::path& imaging_path,
                               const std::filesystem::path& genetics_path,
                               const std::filesystem::path& clinical_path,
                               const std::filesystem::path& mmse_path,
                               const CohortSchema& schema, IngestionReport* report = nullptr) {
    CsvTable imaging = read_csv(imaging_path);
    CsvTable genetics = read_csv(genetics_path);
    CsvTable clinical = read_csv(clinical_path);
    CsvTable mmse = read_csv(mmse_path);

    detail::check_columns(imaging, schema.imaging_columns(), imaging_path.string());
    detail::check_columns(genetics, schema.genetics_columns(), genetics_path.string());
    detail::check_columns(clinical, schema.clinical_columns(), clinical_path.string());
    detail::check_columns(mmse, schema.mmse_columns(), mmse_path.string());

    auto img_idx = detail::index_rows(imaging, imaging_path.string());
    auto gen_idx = detail::index_rows(genetics, genetics_path.string());
    auto cli_idx = detail::index_rows(clinical, clinical_path.string());
    auto mmse_idx = detail::index_rows(mmse, mmse_path.string());

    IngestionReport local;
    IngestionReport& rep = report ? *report : local;

    // Union of ids keeps the report informative about one-sided subjects.
    std::set<std::string> all_ids;
    for (const auto& [id, row] : img_idx) all_ids.insert(id);
    for (const auto& [id, row] : gen_idx) all_ids.insert(id);
    for (const auto& [id, row] : cli_idx) all_ids.insert(id);
    for (const auto& [id, row] : mmse_idx) all_ids.insert(id);

    // Column positions, resolved once against each file's header order.
    std::vector<int> img_cols, cli_cols, mmse_cols;
    for (const auto& roi : schema.roi_names)
        for (const auto& trait : schema.trait_names)
            img_cols.push_back(imaging.column(roi + "_" + trait));
    for (const auto& name : schema.clinical_names) cli_cols.push_back(clinical.column(name));
    for (const auto* v : visit_names()) mmse_cols.push_back(mmse.column(std::string("mmse_") + v));

    struct SnpCols {
        int dosage, odds, raf, inter, chr;
    };
    std::vector<SnpCols> snp_cols;
    for (const auto& snp : schema.snp_names)
        snp_cols.push_back({genetics.column(snp), genetics.column(snp + "_or"),
                            genetics.column(snp + "_raf"), genetics.column(snp + "_intergenic"),
                            genetics.column(snp + "_chr")});

    CohortTable cohort;
    cohort.schema = schema;

    for (const auto& id : all_ids) {
        auto img_it = img_idx.find(id);
        auto gen_it = gen_idx.find(id);
        auto cli_it = cli_idx.find(id);
        auto mmse_it = mmse_idx.find(id);
        if (img_it == img_idx.end()) { rep.dropped.push_back({id, "missing imaging"}); continue; }
        if (gen_it == gen_idx.end()) { rep.dropped.push_back({id, "missing genetics"}); continue; }
        if (cli_it == cli_idx.end()) { rep.dropped.push_back({id, "missing clinical"}); continue; }
        if (mmse_it == mmse_idx.end()) { rep.dropped.push_back({id, "missing mmse"}); continue; }

        SubjectRecord rec;
        rec.subject_id = id;
        std::string drop_reason;

        rec.imaging.resize(schema.n_roi(), kNumImagingTraits);
        const auto& img_row = *img_it->second;
        for (int r = 0; r < schema.n_roi() && drop_reason.empty(); ++r) {
            for (int t = 0; t < kNumImagingTraits; ++t) {
                double v = parse_double(img_row[img_cols[r * kNumImagingTraits + t]],
                                        imaging_path.string() + " subject " + id);
                if (!std::isfinite(v)) { drop_reason = "non-finite imaging value"; break; }
                rec.imaging(r, t) = v;
            }
        }

        const auto& gen_row = *gen_it->second;
        for (int s = 0; s < schema.n_snp() && drop_reason.empty(); ++s) {
            const std::string ctx = genetics_path.string() + " subject " + id;
            SnpRecord snp;
            long dosage = parse_long(gen_row[snp_cols[s].dosage], ctx);
            if (dosage < 0 || dosage > 2) { drop_reason = "dosage out of range"; break; }
            snp.dosage = static_cast<int>(dosage);
            snp.odds_ratio = parse_double(gen_row[snp_cols[s].odds], ctx);
            if (!(snp.odds_ratio > 0.0) || !std::isfinite(snp.odds_ratio)) {
                drop_reason = "odds ratio not positive";
                break;
            }
            snp.rare_allele_freq = parse_double(gen_row[snp_cols[s].raf], ctx);
            if (!(snp.rare_allele_freq >= 0.0 && snp.rare_allele_freq <= 1.0)) {
                drop_reason = "rare allele frequency outside [0,1]";
                break;
            }
            long inter = parse_long(gen_row[snp_cols[s].inter], ctx);
            if (inter != 0 && inter != 1) { drop_reason = "intergenic flag not binary"; break; }
            snp.intergenic = static_cast<int>(inter);
            snp.chromosome = detail::parse_chromosome(gen_row[snp_cols[s].chr], ctx);
            rec.genetics.push_back(snp);
        }

        const auto& cli_row = *cli_it->second;
        rec.clinical.resize(schema.n_clinical());
        for (int c = 0; c < schema.n_clinical() && drop_reason.empty(); ++c) {
            double v = parse_double(cli_row[cli_cols[c]], clinical_path.string() + " subject " + id);
            if (!std::isfinite(v)) { drop_reason = "non-finite clinical value"; break; }
            rec.clinical(c) = v;
        }

        const auto& mmse_row = *mmse_it->second;
        for (int v = 0; v < kNumVisits && drop_reason.empty(); ++v) {
            const std::string& cell = mmse_row[mmse_cols[v]];
            if (trim(cell).empty()) { drop_reason = std::string("missing mmse visit ") + visit_names()[v]; break; }
            long score = parse_long(cell, mmse_path.string() + " subject " + id);
            if (score < 0 || score > 30) { drop_reason = "mmse score out of range"; break; }
            rec.mmse[v] = static_cast<int>(score);
        }

        if (!drop_reason.empty()) {
            rep.dropped.push_back({id, drop_reason});
            continue;
        }
        cohort.records.push_back(std::move(rec));
    }

    if (cohort.records.empty())
        throw DataError("zero surviving subjects after ingestion (" +
                        std::to_string(rep.dropped.size()) + " dropped)");
    return cohort;
}

// Writes the four modality CSVs in exactly the schema load_cohort ingests.
inline void write_cohort_csvs(const CohortTable& cohort, const std::filesystem::path& dir) {
    const auto& schema = cohort.schema;
    std::vector<std::vector<std::string>> imaging, genetics, clinical, mmse;
    for (const auto& rec : cohort.records) {
        std::vector<std::string> img = {rec.subject_id};
        for (int r = 0; r < rec.imaging.rows(); ++r)
            for (int t = 0; t < rec.imaging.cols(); ++t)
                img.push_back(format_double(rec.imaging(r, t)));
        imaging.push_back(std::move(img));

        std::vector<std::string> gen = {rec.subject_id};
        for (const auto& snp : rec.genetics) {
            gen.push_back(std::to_string(snp.dosage));
            gen.push_back(format_double(snp.odds_ratio));
            gen.push_back(format_double(snp.rare_allele_freq));
            gen.push_back(std::to_string(snp.intergenic));
            gen.push_back(std::to_string(snp.chromosome));
        }
        genetics.push_back(std::move(gen));

        std::vector<std::string> cli = {rec.subject_id};
        for (int c = 0; c < rec.clinical.size(); ++c) cli.push_back(format_double(rec.clinical(c)));
        clinical.push_back(std::move(cli));

        std::vector<std::string> mm = {rec.subject_id};
        for (int v = 0; v < kNumVisits; ++v) mm.push_back(std::to_string(rec.mmse[v]));
        mmse.push_back(std::move(mm));
    }
    std::filesystem::create_directories(dir);
    write_csv(dir / "imaging.csv", schema.imaging_columns(), imaging);
    write_csv(dir / "genetics.csv", schema.genetics_columns(), genetics);
    write_csv(dir / "clinical.csv", schema.clinical_columns(), clinical);
    write_csv(dir / "mmse.csv", schema.mmse_columns(), mmse);
}

// ---------------------------------------------------------------------------
// MMSE delta trajectories

inline std::vector<DeltaTrajectory> compute_mmse_deltas(const CohortTable& cohort) {
    std::vector<DeltaTrajectory> out;
    out.reserve(cohort.records.size());
    for (const auto& rec : cohort.records) {
        DeltaTrajectory t;
        t.subject_id = rec.subject_id;
        for (int v = 1; v < kNumVisits; ++v)
            t.deltas(v - 1) = static_cast<double>(rec.mmse[v] - rec.mmse[0]);
        out.push_back(std::move(t));
    }
    return out;
}

// ---------------------------------------------------------------------------
// k-means subtype labels

namespace detail {

struct KmeansRun {
    std::vector<int> assignment;
    Mat centroids;  // k x d
    double wcss = std::numeric_limits<double>::infinity();
    bool valid = false;
};

// Lloyd's algorithm with k-means++ seeding. A run is invalid when a cluster
// empties; the caller retries with fresh seeding.
inline KmeansRun kmeans_once(const Mat& points, int k, Rng& rng, int max_iters) {
    const int n = static_cast<int>(points.rows());
    const int d = static_cast<int>(points.cols());
    KmeansRun run;
    run.centroids.resize(k, d);

    // k-means++: first centroid uniform, then D^2 sampling.
    std::vector<double> dist2(n, std::numeric_limits<double>::infinity());
    int first = static_cast<int>(rng.uniform_int(n));
    run.centroids.row(0) = points.row(first);
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            double dd = (points.row(i) - run.centroids.row(c - 1)).squaredNorm();
            dist2[i] = std::min(dist2[i], dd);
            total += dist2[i];
        }
        int chosen = n - 1;
        if (total > 0.0) {
            double target = rng.uniform() * total;
            double acc = 0.0;
            for (int i = 0; i < n; ++i) {
                acc += dist2[i];
                if (acc >= target) { chosen = i; break; }
            }
        } else {
            chosen = static_cast<int>(rng.uniform_int(n));
        }
        run.centroids.row(c) = points.row(chosen);
    }

    run.assignment.assign(n, -1);
    for (int iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_d = (points.row(i) - run.centroids.row(0)).squaredNorm();
            for (int c = 1; c < k; ++c) {
                double dd = (points.row(i) - run.centroids.row(c)).squaredNorm();
                if (dd < best_d) { best_d = dd; best = c; }
            }
            if (run.assignment[i] != best) { run.assignment[i] = best; changed = true; }
        }
        Mat sums = Mat::Zero(k, d);
        std::vector<int> counts(k, 0);
        for (int i = 0; i < n; ++i) {
            sums.row(run.assignment[i]) += points.row(i);
            counts[run.assignment[i]]++;
        }
        for (int c = 0; c < k; ++c) {
            if (counts[c] == 0) return run;  // empty cluster, invalid run
            run.centroids.row(c) = sums.row(c) / counts[c];
        }
        if (!changed && iter > 0) break;
    }

    run.wcss = 0.0;
    for (int i = 0; i < n; ++i)
        run.wcss += (points.row(i) - run.centroids.row(run.assignment[i])).squaredNorm();
    run.valid = true;
    return run;
}

}  // namespace detail

// Clusters delta trajectories and names the groups by how far the m24
// centroid coordinate has fallen: slow keeps the highest (least negative)
// value, fast the lowest.
inline LabelSet cluster_subtypes(const std::vector<DeltaTrajectory>& trajectories, int k = 3,
                                 uint64_t seed = 0, int n_restarts = 10, int max_iters = 300) {
    const int n = static_cast<int>(trajectories.size());
    if (k != 3) throw ConfigError("cluster_subtypes: subtype naming requires k = 3");
    Mat points(n, 3);
    for (int i = 0; i < n; ++i) points.row(i) = trajectories[i].deltas.transpose();

    std::set<std::array<double, 3>> distinct;
    for (int i = 0; i < n; ++i) distinct.insert({points(i, 0), points(i, 1), points(i, 2)});
    if (static_cast<int>(distinct.size()) < k)
        throw DataError("cluster_subtypes: fewer distinct trajectories (" +
                        std::to_string(distinct.size()) + ") than k = " + std::to_string(k));

    Rng rng(derive_seed(seed, 0x6b6d65616e73ULL));
    detail::KmeansRun best;
    int attempts = 0;
    while (attempts < n_restarts) {
        ++attempts;
        auto run = detail::kmeans_once(points, k, rng, max_iters);
        if (run.valid && run.wcss < best.wcss) best = run;
    }
    if (!best.valid)
        throw NumericError("cluster_subtypes: no valid clustering in " +
                           std::to_string(n_restarts) + " restarts");

    // Rename by descending m24 centroid coordinate.
    std::array<int, 3> order = {0, 1, 2};
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return best.centroids(a, 2) > best.centroids(b, 2); });
    std::array<int, 3> rank{};  // original cluster -> named class index
    for (int c = 0; c < 3; ++c) rank[order[c]] = c;

    LabelSet labels;
    labels.centroids.resize(3, 3);
    for (int c = 0; c < 3; ++c) labels.centroids.row(c) = best.centroids.row(order[c]);
    for (int i = 0; i < n; ++i)
        labels.assignments[trajectories[i].subject_id] = rank[best.assignment[i]];
    return labels;
}

inline std::string LabelSet::to_json() const {
    std::string out = "{\n  \"class_names\": [";
    for (int c = 0; c < 3; ++c) out += std::string(c ? ", " : "") + "\"" + class_names[c] + "\"";
    out += "],\n  \"centroids\": [";
    for (int c = 0; c < 3; ++c) {
        out += c ? ", [" : "[";
        for (int d = 0; d < 3; ++d)
            out += std::string(d ? ", " : "") + format_double(centroids(c, d));
        out += "]";
    }
    out += "],\n  \"assignments\": {";
    bool first = true;
    for (const auto& [id, cls] : assignments) {
        out += std::string(first ? "" : ",") + "\n    \"" + id + "\": " + std::to_string(cls);
        first = false;
    }
    out += "\n  }\n}\n";
    return out;
}

// ---------------------------------------------------------------------------
// Train-set normalization

struct NormalizationStats {
    Mat imaging_mean, imaging_std;        // n_roi x 4
    Vec clinical_mean, clinical_std;      // n_clinical
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> imaging_constant;
    Eigen::Matrix<bool, Eigen::Dynamic, 1> clinical_constant;
    std::vector<std::string> warnings;
};

// z-score statistics from the given training subjects only. Sample (n-1)
// standard deviation; features constant in the train set are flagged and
// left unscaled.
inline NormalizationStats fit_normalizer(const CohortTable& cohort,
                                         const std::vector<std::string>& train_ids) {
    std::set<std::string> wanted(train_ids.begin(), train_ids.end());
    std::vector<const SubjectRecord*> train;
    for (const auto& rec : cohort.records)
        if (wanted.count(rec.subject_id)) train.push_back(&rec);
    if (train.size() != wanted.size())
        throw DataError("fit_normalizer: train_ids contains unknown subject ids");
    if (train.empty()) throw DataError("fit_normalizer: empty train set");

    const int n_roi = cohort.schema.n_roi();
    const int n_clin = cohort.schema.n_clinical();
    const double n = static_cast<double>(train.size());

    NormalizationStats stats;
    stats.imaging_mean = Mat::Zero(n_roi, kNumImagingTraits);
    stats.imaging_std = Mat::Ones(n_roi, kNumImagingTraits);
    stats.imaging_constant.setConstant(n_roi, kNumImagingTraits, false);
    stats.clinical_mean = Vec::Zero(n_clin);
    stats.clinical_std = Vec::Ones(n_clin);
    stats.clinical_constant.setConstant(n_clin, false);

    for (const auto* rec : train) stats.imaging_mean += rec->imaging;
    stats.imaging_mean /= n;
    for (const auto* rec : train) stats.clinical_mean += rec->clinical;
    stats.clinical_mean /= n;

    auto flag = [&](const std::string& what) {
        stats.warnings.push_back("constant feature left unscaled: " + what);
    };

    Mat img_ss = Mat::Zero(n_roi, kNumImagingTraits);
    Vec cli_ss = Vec::Zero(n_clin);
    for (const auto* rec : train) {
        img_ss += (rec->imaging - stats.imaging_mean).array().square().matrix();
        cli_ss += (rec->clinical - stats.clinical_mean).array().square().matrix();
    }
    for (int r = 0; r < n_roi; ++r) {
        for (int t = 0; t < kNumImagingTraits; ++t) {
            double sd = train.size() > 1 ? std::sqrt(img_ss(r, t) / (n - 1.0)) : 0.0;
            if (sd > 0.0) {
                stats.imaging_std(r, t) = sd;
            } else {
                stats.imaging_constant(r, t) = true;
                flag(cohort.schema.roi_names[r] + "_" + cohort.schema.trait_names[t]);
            }
        }
    }
    for (int c = 0; c < n_clin; ++c) {
        double sd = train.size() > 1 ? std::sqrt(cli_ss(c) / (n - 1.0)) : 0.0;
        if (sd > 0.0) {
            stats.clinical_std(c) = sd;
        } else {
            stats.clinical_constant(c) = true;
            flag(cohort.schema.clinical_names[c]);
        }
    }
    return stats;
}

// Applies train-set statistics to imaging and clinical features of every
// subject; genetics and MMSE pass through unchanged.
inline CohortTable apply_normalizer(const CohortTable& cohort, const NormalizationStats& stats) {
    CohortTable out = cohort;
    for (auto& rec : out.records) {
        for (int r = 0; r < rec.imaging.rows(); ++r)
            for (int t = 0; t < rec.imaging.cols(); ++t)
                if (!stats.imaging_constant(r, t))
                    rec.imaging(r, t) = (rec.imaging(r, t) - stats.imaging_mean(r, t)) /
                                        stats.imaging_std(r, t);
        for (int c = 0; c < rec.clinical.size(); ++c)
            if (!stats.clinical_constant(c))
                rec.clinical(c) = (rec.clinical(c) - stats.clinical_mean(c)) / stats.clinical_std(c);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Adjusted Rand index, for checking recovered labels against planted ones.

inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) throw DataError("adjusted_rand_index: length mismatch");
    const int n = static_cast<int>(a.size());
    int ka = *std::max_element(a.begin(), a.end()) + 1;
    int kb = *std::max_element(b.begin(), b.end()) + 1;
    Mat table = Mat::Zero(ka, kb);
    for (int i = 0; i < n; ++i) table(a[i], b[i]) += 1.0;

    auto comb2 = [](double x) { return x * (x - 1.0) / 2.0; };
    double sum_ij = 0.0, sum_a = 0.0, sum_b = 0.0;
    for (int i = 0; i < ka; ++i)
        for (int j = 0; j < kb; ++j) sum_ij += comb2(table(i, j));
    for (int i = 0; i < ka; ++i) sum_a += comb2(table.row(i).sum());
    for (int j = 0; j < kb; ++j) sum_b += comb2(table.col(j).sum());
    double expected = sum_a * sum_b / comb2(static_cast<double>(n));
    double max_index = 0.5 * (sum_a + sum_b);
    if (max_index == expected) return 1.0;  // both partitions trivial
    return (sum_ij - expected) / (max_index - expected);
}

}  // namespace tricoat
