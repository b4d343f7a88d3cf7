#include <catch2/catch_amalgamated.hpp>

#include "test_util.hpp"
#include "tricoat/cohort.hpp"

using namespace tricoat;
using namespace tricoat::testutil;

namespace {

CohortSchema tiny_schema() { return CohortSchema::defaults(2, 2, 2); }

}  // namespace

TEST_CASE("load_cohort keeps the intersection and reports drops") {
    auto schema = tiny_schema();
    auto dir = fresh_temp_dir("tricoat_cohort_intersect");
    auto recs = std::vector<SubjectRecord>{make_record("A", schema, 1), make_record("B", schema, 2),
                                           make_record("C", schema, 3)};
    auto rows = csv_rows_for(recs);
    write_csv(dir / "imaging.csv", schema.imaging_columns(), rows.imaging);
    write_csv(dir / "genetics.csv", schema.genetics_columns(), rows.genetics);
    write_csv(dir / "clinical.csv", schema.clinical_columns(), rows.clinical);
    rows.mmse.pop_back();  // C has no mmse row
    write_csv(dir / "mmse.csv", schema.mmse_columns(), rows.mmse);

    IngestionReport report;
    auto cohort = load_cohort(dir / "imaging.csv", dir / "genetics.csv", dir / "clinical.csv",
                              dir / "mmse.csv", schema, &report);
    REQUIRE(cohort.subject_ids() == std::vector<std::string>{"A", "B"});
    REQUIRE(report.dropped.size() == 1);
    REQUIRE(report.dropped[0].subject_id == "C");
    REQUIRE(report.dropped[0].reason == "missing mmse");
}

TEST_CASE("default schema yields 72x4 / 70x5 / 7 record shapes") {
    auto schema = CohortSchema::defaults();
    auto dir = fresh_temp_dir("tricoat_cohort_shapes");
    write_cohort_csvs(dir, schema, {make_record("S1", schema, 9)});
    auto cohort = load_cohort(dir / "imaging.csv", dir / "genetics.csv", dir / "clinical.csv",
                              dir / "mmse.csv", schema);
    REQUIRE(cohort.records[0].imaging.rows() == 72);
    REQUIRE(cohort.records[0].imaging.cols() == 4);
    REQUIRE(cohort.records[0].genetics.size() == 70);  // 5 attributes incl. chromosome
    REQUIRE(cohort.records[0].clinical.size() == 7);
}

TEST_CASE("out-of-range dosage drops the subject with a reason") {
    auto schema = tiny_schema();
    auto dir = fresh_temp_dir("tricoat_cohort_dosage");
    auto bad = make_record("BAD", schema, 4);
    bad.genetics[1].dosage = 3;
    write_cohort_csvs(dir, schema, {make_record("OK", schema, 5), bad});
    IngestionReport report;
    auto cohort = load_cohort(dir / "imaging.csv", dir / "genetics.csv", dir / "clinical.csv",
                              dir / "mmse.csv", schema, &report);
    REQUIRE(cohort.subject_ids() == std::vector<std::string>{"OK"});
    REQUIRE(report.dropped.size() == 1);
    REQUIRE(report.dropped[0].reason == "dosage out of range");
}

TEST_CASE("column mismatch is fatal and names offenders") {
    auto schema = tiny_schema();
    auto dir = fresh_temp_dir("tricoat_cohort_columns");
    write_cohort_csvs(dir, schema, {make_record("S1", schema, 6)});
    // Clobber the clinical file with a renamed column.
    auto cols = schema.clinical_columns();
    cols[1] = "WRONG_NAME";
    write_csv(dir / "clinical.csv", cols, {{"S1", "1.0", "2.0"}});
    try {
        load_cohort(dir / "imaging.csv", dir / "genetics.csv", dir / "clinical.csv",
                    dir / "mmse.csv", schema);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        std::string msg = e.what();
        REQUIRE(msg.find("WRONG_NAME") != std::string::npos);
        REQUIRE(msg.find("LDELTOTAL") != std::string::npos);
    }
}

TEST_CASE("missing file and zero survivors are fatal") {
    auto schema = tiny_schema();
    auto dir = fresh_temp_dir("tricoat_cohort_fatal");
    write_cohort_csvs(dir, schema, {make_record("S1", schema, 7)});
    REQUIRE_THROWS_AS(load_cohort(dir / "nope.csv", dir / "genetics.csv", dir / "clinical.csv",
                                  dir / "mmse.csv", schema),
                      DataError);

    auto bad = make_record("S1", schema, 7);
    bad.genetics[0].dosage = 3;  // only subject becomes invalid
    write_cohort_csvs(dir, schema, {bad});
    REQUIRE_THROWS_AS(load_cohort(dir / "imaging.csv", dir / "genetics.csv", dir / "clinical.csv",
                                  dir / "mmse.csv", schema),
                      DataError);
}

TEST_CASE("unknown chromosome aborts ingestion") {
    auto schema = tiny_schema();
    auto dir = fresh_temp_dir("tricoat_cohort_chrom");
    auto rec = make_record("S1", schema, 8);
    write_cohort_csvs(dir, schema, {rec});
    // Rewrite genetics with chromosome 24.
    auto rows = csv_rows_for({rec});
    rows.genetics[0].back() = "24";
    write_csv(dir / "genetics.csv", schema.genetics_columns(), rows.genetics);
    REQUIRE_THROWS_AS(load_cohort(dir / "imaging.csv", dir / "genetics.csv", dir / "clinical.csv",
                                  dir / "mmse.csv", schema),
                      DataError);

    rows.genetics[0].back() = "X";  // X maps to 23
    write_csv(dir / "genetics.csv", schema.genetics_columns(), rows.genetics);
    auto cohort = load_cohort(dir / "imaging.csv", dir / "genetics.csv", dir / "clinical.csv",
                              dir / "mmse.csv", schema);
    REQUIRE(cohort.records[0].genetics.back().chromosome == 23);
}

TEST_CASE("ingestion is idempotent") {
    auto schema = tiny_schema();
    auto dir = fresh_temp_dir("tricoat_cohort_idem");
    write_cohort_csvs(dir, schema, {make_record("S1", schema, 10), make_record("S2", schema, 11)});
    auto a = load_cohort(dir / "imaging.csv", dir / "genetics.csv", dir / "clinical.csv",
                         dir / "mmse.csv", schema);
    auto b = load_cohort(dir / "imaging.csv", dir / "genetics.csv", dir / "clinical.csv",
                         dir / "mmse.csv", schema);
    REQUIRE(a.size() == b.size());
    for (int i = 0; i < a.size(); ++i) {
        REQUIRE(a.records[i].subject_id == b.records[i].subject_id);
        REQUIRE(a.records[i].imaging == b.records[i].imaging);
        REQUIRE(a.records[i].clinical == b.records[i].clinical);
        REQUIRE(a.records[i].mmse == b.records[i].mmse);
        for (size_t s = 0; s < a.records[i].genetics.size(); ++s) {
            REQUIRE(a.records[i].genetics[s].dosage == b.records[i].genetics[s].dosage);
            REQUIRE(a.records[i].genetics[s].chromosome == b.records[i].genetics[s].chromosome);
        }
    }
}

TEST_CASE("mmse deltas subtract the baseline") {
    auto schema = tiny_schema();
    CohortTable cohort;
    cohort.schema = schema;
    cohort.records.push_back(make_record("A", schema, 1, {28, 28, 27, 28}));
    cohort.records.push_back(make_record("B", schema, 2, {27, 24, 20, 15}));
    cohort.records.push_back(make_record("C", schema, 3, {30, 30, 30, 30}));
    auto deltas = compute_mmse_deltas(cohort);
    REQUIRE(deltas[0].deltas == Eigen::Vector3d(0, -1, 0));
    REQUIRE(deltas[1].deltas == Eigen::Vector3d(-3, -7, -12));
    REQUIRE(deltas[2].deltas == Eigen::Vector3d(0, 0, 0));
}

TEST_CASE("three distinct trajectories cluster one-per-group with ordered names") {
    std::vector<DeltaTrajectory> traj = {
        {"flat", Eigen::Vector3d(0, 0, 0)},
        {"mid", Eigen::Vector3d(-2, -4, -6)},
        {"steep", Eigen::Vector3d(-5, -10, -15)},
    };
    auto labels = cluster_subtypes(traj, 3, 123, 10);
    REQUIRE(labels.assignments.at("flat") == 0);   // slow
    REQUIRE(labels.assignments.at("mid") == 1);    // intermediate
    REQUIRE(labels.assignments.at("steep") == 2);  // fast
    REQUIRE(labels.class_names[0] == "slow");
    REQUIRE(labels.centroids(0, 2) >= labels.centroids(1, 2));
    REQUIRE(labels.centroids(1, 2) >= labels.centroids(2, 2));
}

TEST_CASE("tight planted clusters are recovered exactly") {
    // Oracle: nearest planted centroid.
    const Eigen::Vector3d centers[3] = {{0, 0, 0}, {-2, -4, -6}, {-5, -10, -15}};
    Rng rng(77);
    std::vector<DeltaTrajectory> traj;
    std::vector<int> planted;
    for (int i = 0; i < 60; ++i) {
        int c = i % 3;
        Eigen::Vector3d p = centers[c];
        for (int d = 0; d < 3; ++d) p(d) += rng.normal(0.0, 0.1);
        int nearest = 0;
        for (int cc = 1; cc < 3; ++cc)
            if ((p - centers[cc]).squaredNorm() < (p - centers[nearest]).squaredNorm()) nearest = cc;
        planted.push_back(nearest);
        traj.push_back({"S" + std::to_string(i), p});
    }
    auto labels = cluster_subtypes(traj, 3, 5, 10);
    std::vector<int> found;
    for (int i = 0; i < 60; ++i) found.push_back(labels.assignments.at("S" + std::to_string(i)));
    REQUIRE(adjusted_rand_index(planted, found) == 1.0);
}

TEST_CASE("clustering is invariant across reruns with the same seed") {
    Rng rng(15);
    std::vector<DeltaTrajectory> traj;
    for (int i = 0; i < 40; ++i)
        traj.push_back({"S" + std::to_string(i),
                        Eigen::Vector3d(rng.normal(0, 2), rng.normal(-3, 3), rng.normal(-6, 4))});
    auto a = cluster_subtypes(traj, 3, 99, 10);
    auto b = cluster_subtypes(traj, 3, 99, 10);
    REQUIRE(a.assignments == b.assignments);
    REQUIRE(a.centroids == b.centroids);
    REQUIRE(a.centroids(0, 2) >= a.centroids(1, 2));
    REQUIRE(a.centroids(1, 2) >= a.centroids(2, 2));
}

TEST_CASE("clustering needs k distinct points") {
    std::vector<DeltaTrajectory> traj = {
        {"a", Eigen::Vector3d(0, 0, 0)},
        {"b", Eigen::Vector3d(0, 0, 0)},
        {"c", Eigen::Vector3d(-1, -1, -1)},
    };
    REQUIRE_THROWS_AS(cluster_subtypes(traj, 3, 1, 5), DataError);
}

TEST_CASE("normalizer matches the fixed convention and passes genetics through") {
    auto schema = tiny_schema();
    CohortTable cohort;
    cohort.schema = schema;
    for (int i = 0; i < 4; ++i)
        cohort.records.push_back(make_record("S" + std::to_string(i), schema, 20 + i));
    // First clinical feature takes values 1,2,3 on the train subjects, 4 on test.
    for (int i = 0; i < 3; ++i) cohort.records[i].clinical(0) = i + 1.0;
    cohort.records[3].clinical(0) = 4.0;

    auto stats = fit_normalizer(cohort, {"S0", "S1", "S2"});
    REQUIRE(stats.clinical_mean(0) == 2.0);
    REQUIRE(stats.clinical_std(0) == 1.0);

    auto normalized = apply_normalizer(cohort, stats);
    REQUIRE(normalized.records[3].clinical(0) == 2.0);
    // Genetics unchanged bit-for-bit.
    for (int i = 0; i < 4; ++i)
        for (size_t s = 0; s < cohort.records[i].genetics.size(); ++s)
            REQUIRE(normalized.records[i].genetics[s].dosage == cohort.records[i].genetics[s].dosage);
}

TEST_CASE("constant features are flagged and left unscaled") {
    auto schema = tiny_schema();
    CohortTable cohort;
    cohort.schema = schema;
    for (int i = 0; i < 3; ++i) {
        auto rec = make_record("S" + std::to_string(i), schema, 30 + i);
        rec.clinical(1) = 5.0;  // constant across train
        cohort.records.push_back(rec);
    }
    auto stats = fit_normalizer(cohort, {"S0", "S1", "S2"});
    REQUIRE(stats.clinical_constant(1));
    REQUIRE_FALSE(stats.warnings.empty());
    auto normalized = apply_normalizer(cohort, stats);
    REQUIRE(normalized.records[0].clinical(1) == 5.0);
}

TEST_CASE("normalizer stats depend only on train rows") {
    auto schema = tiny_schema();
    auto cohort = make_cohort(schema, 6, 40);
    std::vector<std::string> train_ids = {"S001", "S002", "S003"};
    auto stats = fit_normalizer(cohort, train_ids);

    // Perturb a test subject and recompute: bit-identical stats.
    auto perturbed = cohort;
    perturbed.records[4].imaging(0, 0) += 1000.0;
    perturbed.records[4].clinical(0) -= 42.0;
    auto stats2 = fit_normalizer(perturbed, train_ids);
    REQUIRE(stats.imaging_mean == stats2.imaging_mean);
    REQUIRE(stats.imaging_std == stats2.imaging_std);
    REQUIRE(stats.clinical_mean == stats2.clinical_mean);
    REQUIRE(stats.clinical_std == stats2.clinical_std);

    // Oracle: recompute means from train rows alone.
    Mat mean = Mat::Zero(schema.n_roi(), kNumImagingTraits);
    for (const auto& id : train_ids) mean += cohort.by_id(id).imaging;
    mean /= 3.0;
    REQUIRE((stats.imaging_mean - mean).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("unknown train id is rejected") {
    auto schema = tiny_schema();
    auto cohort = make_cohort(schema, 3);
    REQUIRE_THROWS_AS(fit_normalizer(cohort, {"S001", "GHOST"}), DataError);
}

TEST_CASE("adjusted rand index basics") {
    REQUIRE(adjusted_rand_index({0, 0, 1, 1}, {1, 1, 0, 0}) == 1.0);
    REQUIRE(adjusted_rand_index({0, 0, 1, 1}, {0, 1, 0, 1}) < 0.5);
}
