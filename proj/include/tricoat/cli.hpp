#pragma once

// Command-line pipeline: synth | labels | train | evaluate | attention |
// attribute | explain. One configuration document drives every stage; flags
// override individual keys. Each subcommand writes a run manifest with
// content fingerprints of its inputs and outputs.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
// failure.

#include <chrono>
#include <filesystem>
#include <iostream>

#include <nlohmann/json.hpp>

#include "tricoat/cohort.hpp"
#include "tricoat/config.hpp"
#include "tricoat/explain.hpp"
#include "tricoat/harness.hpp"
#include "tricoat/models.hpp"
#include "tricoat/synth.hpp"

#include <CLI11.hpp>

namespace tricoat {

namespace cli {

namespace fs = std::filesystem;

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    long seed = -1;   // -1 keeps the config value
    int jobs = 0;     // 0 keeps the config value
};

struct Context {
    ConfigDoc config;
    fs::path out_dir;

    fs::path cohort_dir() const {
        std::string dir = config.get_string("io.cohort_dir", (out_dir / "cohort").string());
        return fs::path(dir);
    }
};

inline Context make_context(const CommonArgs& args) {
    ConfigDoc config = ConfigDoc::load(args.config_path);
    config.require_known(known_config_keys());
    if (args.seed >= 0) {
        config.set("synth.seed", std::to_string(args.seed));
        config.set("labels.seed", std::to_string(args.seed));
        config.set("train.seed", std::to_string(args.seed));
    }
    if (args.jobs > 0) config.set("train.jobs", std::to_string(args.jobs));
    if (!args.out_dir.empty()) config.set("out_dir", args.out_dir);
    Context ctx{std::move(config), fs::path()};
    ctx.out_dir = fs::path(ctx.config.get_string("out_dir", "out"));
    fs::create_directories(ctx.out_dir);
    return ctx;
}

// Every subcommand writes one of these next to its outputs.
class ManifestWriter {
public:
    ManifestWriter(const Context& ctx, const std::string& command) : start_(clock_t::now()) {
        j_["command"] = command;
        j_["timestamp"] = utc_timestamp();
        json snapshot = json::object();
        for (const auto& [k, v] : ctx.config.entries()) snapshot[k] = v;
        j_["config"] = snapshot;
    }

    void record_seed(const std::string& name, uint64_t seed) { j_["seeds"][name] = seed; }

    void add_input(const fs::path& p) {
        j_["inputs"].push_back({{"path", p.string()}, {"fnv64", file_fingerprint(p)}});
    }
    void add_output(const fs::path& p) {
        j_["outputs"].push_back({{"path", p.string()}, {"fnv64", file_fingerprint(p)}});
    }

    void write(const fs::path& out_dir, const std::string& command) {
        j_["duration_seconds"] =
            std::chrono::duration<double>(clock_t::now() - start_).count();
        write_text_file(out_dir / ("manifest_" + command + ".json"), j_.dump(2) + "\n");
    }

private:
    using clock_t = std::chrono::steady_clock;
    clock_t::time_point start_;
    json j_ = json::object();
};

inline void require_artifact(const fs::path& p, const std::string& producer) {
    if (!fs::exists(p))
        throw DataError("missing " + p.string() + "; run the `" + producer +
                        "` subcommand first");
}

inline CohortTable load_pipeline_cohort(const Context& ctx, IngestionReport* report = nullptr) {
    auto dir = ctx.cohort_dir();
    require_artifact(dir / "imaging.csv", "synth");
    auto schema = CohortSchema::from_config(ctx.config);
    return load_cohort(dir / "imaging.csv", dir / "genetics.csv", dir / "clinical.csv",
                       dir / "mmse.csv", schema, report);
}

inline std::map<std::string, int> load_pipeline_labels(const Context& ctx) {
    auto path = ctx.out_dir / "labels.json";
    require_artifact(path, "labels");
    auto j = json::parse(read_text_file(path));
    std::map<std::string, int> labels;
    for (auto it = j.at("assignments").begin(); it != j.at("assignments").end(); ++it)
        labels[it.key()] = it.value().get<int>();
    return labels;
}

inline FoldPlan load_pipeline_fold_plan(const Context& ctx) {
    auto path = ctx.out_dir / "fold_plan.json";
    require_artifact(path, "train");
    return FoldPlan::from_json(json::parse(read_text_file(path)));
}

// ---------------------------------------------------------------------------
// synth

inline int cmd_synth(const Context& ctx) {
    ManifestWriter manifest(ctx, "synth");
    auto cfg = SynthConfig::from_config(ctx.config);
    manifest.record_seed("synth", cfg.seed);

    auto result = generate_cohort(cfg);
    auto dir = ctx.cohort_dir();
    write_cohort_csvs(result.cohort, dir);
    write_text_file(dir / "synth_manifest.json", result.manifest.dump(2) + "\n");

    for (const char* name : {"imaging.csv", "genetics.csv", "clinical.csv", "mmse.csv",
                             "synth_manifest.json"})
        manifest.add_output(dir / name);
    manifest.write(ctx.out_dir, "synth");
    std::cout << "synth: wrote " << result.cohort.size() << " subjects to " << dir.string()
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// labels

inline int cmd_labels(const Context& ctx) {
    ManifestWriter manifest(ctx, "labels");
    auto dir = ctx.cohort_dir();
    for (const char* name : {"imaging.csv", "genetics.csv", "clinical.csv", "mmse.csv"}) {
        require_artifact(dir / name, "synth");
        manifest.add_input(dir / name);
    }

    IngestionReport report;
    auto cohort = load_pipeline_cohort(ctx, &report);
    auto deltas = compute_mmse_deltas(cohort);

    uint64_t seed = static_cast<uint64_t>(ctx.config.get_int("labels.seed", 0));
    int k = static_cast<int>(ctx.config.get_int("labels.k", 3));
    int restarts = static_cast<int>(ctx.config.get_int("labels.restarts", 10));
    manifest.record_seed("labels", seed);
    auto labels = cluster_subtypes(deltas, k, seed, restarts);

    write_text_file(ctx.out_dir / "labels.json", labels.to_json());
    write_text_file(ctx.out_dir / "ingestion_report.json", report.to_json());
    manifest.add_output(ctx.out_dir / "labels.json");
    manifest.add_output(ctx.out_dir / "ingestion_report.json");
    manifest.write(ctx.out_dir, "labels");

    std::array<int, 3> counts = {0, 0, 0};
    for (const auto& [id, cls] : labels.assignments) counts[static_cast<size_t>(cls)]++;
    std::cout << "labels: " << cohort.size() << " subjects -> slow " << counts[0]
              << ", intermediate " << counts[1] << ", fast " << counts[2] << " ("
              << report.dropped.size() << " dropped)\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train

inline fs::path checkpoint_path(const Context& ctx, ModelKind kind, int fold) {
    return ctx.out_dir / "checkpoints" /
           (std::string(model_kind_name(kind)) + "_fold" + std::to_string(fold) + ".tckp");
}

inline int cmd_train(const Context& ctx, const std::string& model_name) {
    ManifestWriter manifest(ctx, "train");
    ModelKind kind = parse_model_kind(model_name);
    auto cohort = load_pipeline_cohort(ctx);
    auto labels = load_pipeline_labels(ctx);
    manifest.add_input(ctx.out_dir / "labels.json");

    auto mcfg = ModelConfig::from_config(ctx.config);
    auto tcfg = TrainConfig::from_config(ctx.config);
    int n_outer = static_cast<int>(ctx.config.get_int("train.outer_folds", 10));
    int n_inner = static_cast<int>(ctx.config.get_int("train.inner_folds", 5));
    int jobs = static_cast<int>(ctx.config.get_int("train.jobs", 1));
    manifest.record_seed("train", tcfg.seed);

    auto plan = make_fold_plan(labels, n_outer, n_inner, tcfg.seed);
    write_text_file(ctx.out_dir / "fold_plan.json", plan.to_json().dump(2) + "\n");
    manifest.add_output(ctx.out_dir / "fold_plan.json");

    json summary;
    summary["model"] = model_kind_name(kind);
    summary["folds"] = json::array();
    std::vector<json> fold_rows(plan.outer.size());

    auto run_fold = [&](size_t f) {
        const auto& fold = plan.outer[f];
        auto stats = fit_normalizer(cohort, fold.train_ids);
        SubjectBatch batch(apply_normalizer(cohort, stats));
        TrainConfig fold_cfg = tcfg;
        fold_cfg.seed = derive_seed(tcfg.seed, 500 + f);
        auto trained = train_model(kind, mcfg, fold_cfg, batch, labels, fold.inner.front().fit_ids,
                                   fold.inner.front().val_ids);
        auto scores = score_subjects(trained.model, batch, fold.test_ids);
        auto res = auroc_ovo_detail(scores, gather_labels(labels, fold.test_ids));

        TensorStore store;
        for (auto& [name, m] : model_tensors(trained.model)) store.tensors.emplace_back(name, *m);
        store.metadata_json = checkpoint_metadata_json(kind, mcfg, fold_cfg, static_cast<int>(f),
                                                       trained.summary);
        store.save(checkpoint_path(ctx, kind, static_cast<int>(f)));

        json row;
        row["fold"] = f;
        row["best_epoch"] = trained.summary.best_epoch;
        row["val_auroc"] = trained.summary.best_val_auroc;
        row["test_auroc"] = res.value;
        row["auroc_pairs_skipped"] = res.pairs_skipped;
        fold_rows[f] = std::move(row);
    };

    if (jobs > 1) {
        std::vector<std::future<void>> futures;
        size_t next = 0;
        while (next < plan.outer.size()) {
            while (static_cast<int>(futures.size()) < jobs && next < plan.outer.size())
                futures.push_back(std::async(std::launch::async, run_fold, next++));
            for (auto& fut : futures) fut.get();
            futures.clear();
        }
    } else {
        for (size_t f = 0; f < plan.outer.size(); ++f) run_fold(f);
    }

    for (size_t f = 0; f < plan.outer.size(); ++f) {
        summary["folds"].push_back(fold_rows[f]);
        manifest.add_output(checkpoint_path(ctx, kind, static_cast<int>(f)));
        std::cout << "train: fold " << f << " best epoch "
                  << fold_rows[f]["best_epoch"].get<int>() << ", val AUROC "
                  << fold_rows[f]["val_auroc"].get<double>() << ", test AUROC "
                  << fold_rows[f]["test_auroc"].get<double>() << "\n";
    }
    write_text_file(ctx.out_dir / "train_summary.json", summary.dump(2) + "\n");
    manifest.add_output(ctx.out_dir / "train_summary.json");
    manifest.write(ctx.out_dir, "train");
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate

inline int cmd_evaluate(const Context& ctx, const std::string& models_flag) {
    ManifestWriter manifest(ctx, "evaluate");
    auto cohort = load_pipeline_cohort(ctx);
    auto labels = load_pipeline_labels(ctx);
    manifest.add_input(ctx.out_dir / "labels.json");

    ExperimentConfig ecfg;
    ecfg.model = ModelConfig::from_config(ctx.config);
    ecfg.train = TrainConfig::from_config(ctx.config);
    ecfg.n_outer = static_cast<int>(ctx.config.get_int("train.outer_folds", 10));
    ecfg.n_inner = static_cast<int>(ctx.config.get_int("train.inner_folds", 5));
    ecfg.alpha = ctx.config.get_double("train.alpha", 0.005);
    ecfg.jobs = static_cast<int>(ctx.config.get_int("train.jobs", 1));
    ecfg.grid_lr = ctx.config.get_double_list("train.grid.lr", {});
    ecfg.grid_dropout = ctx.config.get_double_list("train.grid.dropout", {});
    for (const auto& name : ctx.config.get_list("train.grid.joint_mode", {}))
        ecfg.grid_joint.push_back(parse_joint_mode(name));
    ecfg.external_predictions = ctx.config.get_string("evaluate.external_predictions", "");

    std::vector<std::string> names =
        models_flag.empty() ? ctx.config.get_list("evaluate.models",
                                                  {"tricoat", "early", "late", "stagewise"})
                            : split(models_flag, ',');
    ecfg.kinds.clear();
    for (auto& name : names) {
        std::string n = trim(name);
        if (n == "external_predictions") continue;  // handled via the csv path below
        ecfg.kinds.push_back(parse_model_kind(n));
    }
    manifest.record_seed("train", ecfg.train.seed);
    if (!ecfg.external_predictions.empty()) manifest.add_input(ecfg.external_predictions);

    auto plan = make_fold_plan(labels, ecfg.n_outer, ecfg.n_inner, ecfg.train.seed);
    auto report = run_experiment(cohort, labels, plan, ecfg);

    write_text_file(ctx.out_dir / "metrics.json", report.to_json().dump(2) + "\n");
    write_text_file(ctx.out_dir / "metrics.txt", report.to_table());
    manifest.add_output(ctx.out_dir / "metrics.json");
    manifest.add_output(ctx.out_dir / "metrics.txt");
    manifest.write(ctx.out_dir, "evaluate");
    std::cout << report.to_table();
    return 0;
}

// ---------------------------------------------------------------------------
// attention

inline int cmd_attention(const Context& ctx) {
    ManifestWriter manifest(ctx, "attention");
    auto cohort = load_pipeline_cohort(ctx);
    auto plan = load_pipeline_fold_plan(ctx);
    require_artifact(ctx.out_dir / "train_summary.json", "train");
    manifest.add_input(ctx.out_dir / "train_summary.json");

    auto summary = json::parse(read_text_file(ctx.out_dir / "train_summary.json"));
    if (summary.at("model").get<std::string>() != "tricoat")
        throw DataError("attention export needs tricoat checkpoints; run `train --model tricoat`");

    // The fold whose model scored the highest test AUROC provides the maps.
    int best_fold = 0;
    double best = -1.0;
    for (const auto& row : summary.at("folds")) {
        if (row.at("test_auroc").get<double>() > best) {
            best = row.at("test_auroc").get<double>();
            best_fold = row.at("fold").get<int>();
        }
    }
    auto ckpt_path = checkpoint_path(ctx, ModelKind::tricoat, best_fold);
    require_artifact(ckpt_path, "train");
    manifest.add_input(ckpt_path);

    auto mcfg = ModelConfig::from_config(ctx.config);
    auto model = TriCoatModel::init(mcfg, 0);
    auto store = TensorStore::load(ckpt_path);
    model.visit([&](const std::string& name, Mat& m) {
        const Mat* src = store.find(name);
        if (!src) throw DataError("checkpoint missing tensor '" + name + "'");
        if (src->rows() != m.rows() || src->cols() != m.cols())
            throw DataError("checkpoint tensor '" + name + "' shape mismatch against model.* config");
        m = *src;
    });

    const auto& fold = plan.outer[static_cast<size_t>(best_fold)];
    auto stats = fit_normalizer(cohort, fold.train_ids);
    SubjectBatch batch(apply_normalizer(cohort, stats));
    export_attention(model, batch, fold.test_ids, cohort.schema, ctx.out_dir / "attention");

    for (const char* name : {"clinical_imaging.csv", "clinical_genetics.csv",
                             "imaging_genetics.csv"})
        manifest.add_output(ctx.out_dir / "attention" / name);
    manifest.write(ctx.out_dir, "attention");
    std::cout << "attention: exported chord data from fold " << best_fold << " (test AUROC "
              << best << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// attribute

inline int cmd_attribute(const Context& ctx, const std::vector<std::string>& subjects) {
    if (subjects.empty()) throw ConfigError("attribute needs at least one --subject");
    ManifestWriter manifest(ctx, "attribute");
    auto cohort = load_pipeline_cohort(ctx);
    auto plan = load_pipeline_fold_plan(ctx);

    auto mcfg = ModelConfig::from_config(ctx.config);
    int n_steps = static_cast<int>(ctx.config.get_int("explain.ig_steps", 256));
    auto raw_stats = RawFeatureStats::from_cohort(cohort);

    for (const auto& id : subjects) {
        // The checkpoint that scored this subject's test fold attributes it.
        int fold_idx = -1;
        for (size_t f = 0; f < plan.outer.size(); ++f)
            for (const auto& tid : plan.outer[f].test_ids)
                if (tid == id) fold_idx = static_cast<int>(f);
        if (fold_idx < 0) throw DataError("subject " + id + " is not in any test fold");

        auto ckpt_path = checkpoint_path(ctx, ModelKind::tricoat, fold_idx);
        require_artifact(ckpt_path, "train");
        auto store = TensorStore::load(ckpt_path);
        AnyModel model = TriCoatModel::init(mcfg, 0);
        for (auto& [name, m] : model_tensors(model)) {
            const Mat* src = store.find(name);
            if (!src) throw DataError("checkpoint missing tensor '" + name + "'");
            *m = *src;
        }

        const auto& fold = plan.outer[static_cast<size_t>(fold_idx)];
        auto stats = fit_normalizer(cohort, fold.train_ids);
        auto normalized = apply_normalizer(cohort, stats);

        auto report = integrated_gradients(
            model, id, SubjectInputs::from_record(normalized.by_id(id)),
            SubjectInputs::from_record(cohort.by_id(id)), raw_stats, cohort.schema, n_steps);
        auto out_path = ctx.out_dir / "attributions" / (id + ".json");
        write_text_file(out_path, report.to_json().dump(2) + "\n");
        manifest.add_output(out_path);
        std::cout << "attribute: " << id << " predicted " << report.predicted_name << " (p="
                  << report.probability << "), completeness residual "
                  << report.completeness_residual << "\n";
    }
    manifest.write(ctx.out_dir, "attribute");
    return 0;
}

// ---------------------------------------------------------------------------
// explain

inline int cmd_explain(const Context& ctx, const std::vector<std::string>& subjects,
                       const std::string& llm_flag) {
    if (subjects.empty()) throw ConfigError("explain needs at least one --subject");
    ManifestWriter manifest(ctx, "explain");

    int top_k = static_cast<int>(ctx.config.get_int("explain.top_k", 10));
    PromptTemplate tpl;
    std::string tpl_path = ctx.config.get_string("explain.template_path", "");
    if (!tpl_path.empty()) tpl = PromptTemplate::load(tpl_path);

    auto llm_cfg = LLMClientConfig::from_config(ctx.config, ctx.out_dir);
    if (!llm_flag.empty()) {
        if (llm_flag != "stub" && llm_flag != "live")
            throw ConfigError("--llm must be 'stub' or 'live'");
        llm_cfg.mode = llm_flag;
    }
    LLMClient client(llm_cfg);

    for (const auto& id : subjects) {
        auto report_path = ctx.out_dir / "attributions" / (id + ".json");
        require_artifact(report_path, "attribute");
        manifest.add_input(report_path);
        auto report = AttributionReport::from_json(json::parse(read_text_file(report_path)));

        auto ranked = rank_salient_features(report, top_k);
        auto doc = build_prompt(ranked, report.predicted_name, report.probability, tpl);
        auto prompt_path = ctx.out_dir / "prompts" / (id + ".txt");
        write_text_file(prompt_path, doc.text + "\n");
        manifest.add_output(prompt_path);

        auto response = client.send_prompt(doc.text);
        json jr;
        jr["subject_id"] = id;
        jr["mode"] = response.mode;
        jr["prompt_hash"] = response.prompt_hash;
        jr["stub_miss"] = response.stub_miss;
        jr["response"] = response.text;
        jr["segments"] = doc.segments.size();
        auto llm_path = ctx.out_dir / "llm" / (id + ".json");
        write_text_file(llm_path, jr.dump(2) + "\n");
        manifest.add_output(llm_path);
        std::cout << "explain: " << id << " -> " << doc.segments.size() << " segments, "
                  << response.mode << (response.stub_miss ? " (stub miss)" : "") << "\n";
    }
    manifest.write(ctx.out_dir, "explain");
    return 0;
}

}  // namespace cli

// Parses arguments and dispatches; returns the process exit code.
inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Tri-modal co-attention subtyping pipeline"};
    app.require_subcommand(1);
    app.fallthrough();

    cli::CommonArgs common;
    app.add_option("--config", common.config_path, "configuration document")->required();
    app.add_option("--seed", common.seed, "override synth/labels/train seeds");
    app.add_option("--out-dir", common.out_dir, "output directory (overrides out_dir)");
    app.add_option("--jobs", common.jobs, "parallel fold workers");

    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic cohort");
    auto* labels_cmd = app.add_subcommand("labels", "compute subtype labels from MMSE deltas");
    auto* train_cmd = app.add_subcommand("train", "train per-fold models and save checkpoints");
    std::string train_model_name = "tricoat";
    train_cmd->add_option("--model", train_model_name, "model kind to train");
    auto* eval_cmd = app.add_subcommand("evaluate", "run the cross-tested model comparison");
    std::string models_flag;
    eval_cmd->add_option("--models", models_flag, "comma list of model kinds");
    auto* attn_cmd = app.add_subcommand("attention", "export mean co-attention chord data");
    auto* attr_cmd = app.add_subcommand("attribute", "integrated-gradients attribution");
    std::vector<std::string> attr_subjects;
    attr_cmd->add_option("--subject", attr_subjects, "subject id (repeatable)");
    auto* explain_cmd = app.add_subcommand("explain", "build prompts and query the LLM client");
    std::vector<std::string> explain_subjects;
    explain_cmd->add_option("--subject", explain_subjects, "subject id (repeatable)");
    std::string llm_flag;
    explain_cmd->add_option("--llm", llm_flag, "override llm.mode (stub|live)");

    try {
        app.parse(argc, const_cast<char**>(argv));
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        auto ctx = cli::make_context(common);
        if (synth_cmd->parsed()) return cli::cmd_synth(ctx);
        if (labels_cmd->parsed()) return cli::cmd_labels(ctx);
        if (train_cmd->parsed()) return cli::cmd_train(ctx, train_model_name);
        if (eval_cmd->parsed()) return cli::cmd_evaluate(ctx, models_flag);
        if (attn_cmd->parsed()) return cli::cmd_attention(ctx);
        if (attr_cmd->parsed()) return cli::cmd_attribute(ctx, attr_subjects);
        if (explain_cmd->parsed()) return cli::cmd_explain(ctx, explain_subjects, llm_flag);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

inline int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("tricoat");
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace tricoat
