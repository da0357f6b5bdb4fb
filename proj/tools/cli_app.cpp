#include "cli_app.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "debiaslab/dataset.hpp"
#include "debiaslab/editors.hpp"
#include "debiaslab/error.hpp"
#include "debiaslab/metrics.hpp"
#include "debiaslab/paraphrase.hpp"
#include "debiaslab/protocols.hpp"
#include "debiaslab/records.hpp"
#include "debiaslab/reporting.hpp"
#include "debiaslab/run_config.hpp"
#include "debiaslab/synthetic.hpp"
#include "debiaslab/tiny_transformer.hpp"

namespace debiaslab::cli {

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
    std::string config_path;
    std::string model;
    std::string dataset;
    std::string train_dataset;
    std::string probes;
    std::string benchmark;
    std::string output_dir;
    std::string editor;
    std::string selection;
    std::vector<uint64_t> seeds;
    std::optional<int> layer;
    std::optional<double> learning_rate;
    std::optional<int> max_steps;
    std::optional<double> linf_bound;
    std::optional<int> value_steps;
    std::optional<int> demos_k;
    std::optional<double> scope_threshold;
    std::optional<int> layer_from, layer_to;
    bool length_normalized = false;
    bool full_probes = false;
};

void add_common_flags(CLI::App* cmd, CommonFlags& flags, bool needs_editor) {
    cmd->add_option("--config", flags.config_path, "layered key-value config file");
    cmd->add_option("--model", flags.model, "tiny transformer config path or adapter id");
    cmd->add_option("--dataset", flags.dataset, "sentence-pair dataset (JSON array)");
    cmd->add_option("--train-dataset", flags.train_dataset,
                    "train split used for IKE demonstrations");
    cmd->add_option("--probes", flags.probes, "knowledge probe file (JSON array)");
    cmd->add_option("--output", flags.output_dir, "output directory for run artifacts");
    cmd->add_option("--seed", flags.seeds, "seed list (repeatable)");
    cmd->add_option("--target-selection", flags.selection, "none | rule | causal");
    cmd->add_flag("--length-normalized", flags.length_normalized,
                  "score sentences by per-token mean log-probability");
    cmd->add_flag("--full-probes", flags.full_probes, "evaluate every probe, not the sample");
    if (needs_editor) {
        cmd->add_option("--editor", flags.editor, "FT | FT-L | ROME | MEMIT | SERAC | IKE")
            ->required();
        cmd->add_option("--layer", flags.layer, "edit layer (FT, FT-L, ROME)");
        cmd->add_option("--layer-from", flags.layer_from, "MEMIT range start");
        cmd->add_option("--layer-to", flags.layer_to, "MEMIT range end");
        cmd->add_option("--learning-rate", flags.learning_rate, "gradient-path learning rate");
        cmd->add_option("--max-steps", flags.max_steps, "gradient-path step budget");
        cmd->add_option("--linf-bound", flags.linf_bound, "FT-L weight-change bound");
        cmd->add_option("--value-steps", flags.value_steps, "ROME/MEMIT value-solve steps");
        cmd->add_option("--demos-k", flags.demos_k, "IKE demonstration count");
        cmd->add_option("--scope-threshold", flags.scope_threshold, "SERAC scope threshold");
    }
}

RunConfig resolve_config(const CommonFlags& flags, Protocol protocol) {
    ConfigFile file;
    if (!flags.config_path.empty()) {
        file = ConfigFile::parse_file(flags.config_path);
    }
    file.apply_env_overrides();
    std::string editor = flags.editor.empty() ? file.get_or("global", "editor", "FT")
                                              : flags.editor;
    RunConfig rc = run_config_from_file(file, editor);
    rc.protocol = protocol;
    if (!flags.model.empty()) rc.model = flags.model;
    if (!flags.dataset.empty()) rc.dataset_path = flags.dataset;
    if (!flags.train_dataset.empty()) rc.train_dataset_path = flags.train_dataset;
    if (!flags.probes.empty()) rc.probes_path = flags.probes;
    if (!flags.benchmark.empty()) rc.benchmark_path = flags.benchmark;
    if (!flags.output_dir.empty()) rc.output_dir = flags.output_dir;
    if (!flags.seeds.empty()) rc.seeds = flags.seeds;
    if (!flags.selection.empty()) rc.selection = target_selection_from_string(flags.selection);
    if (flags.length_normalized) rc.length_normalized = true;
    if (flags.full_probes) rc.full_probes = true;
    if (flags.layer) rc.editor.layer = *flags.layer;
    if (flags.layer_from) rc.editor.layer_range.first = *flags.layer_from;
    if (flags.layer_to) rc.editor.layer_range.second = *flags.layer_to;
    if (flags.learning_rate) rc.editor.learning_rate = *flags.learning_rate;
    if (flags.max_steps) rc.editor.max_steps = *flags.max_steps;
    if (flags.linf_bound) rc.editor.linf_bound = *flags.linf_bound;
    if (flags.value_steps) rc.editor.value_steps = *flags.value_steps;
    if (flags.demos_k) rc.editor.demos_k = *flags.demos_k;
    if (flags.scope_threshold) rc.editor.scope_threshold = *flags.scope_threshold;
    return rc;
}

int config_failure(const std::vector<std::string>& problems) {
    std::cerr << "configuration invalid:\n";
    for (const std::string& p : problems) std::cerr << "  - " << p << "\n";
    return kExitConfig;
}

std::unique_ptr<TinyTransformer> load_model(const std::string& spec) {
    if (fs::exists(spec)) {
        return std::make_unique<TinyTransformer>(TinyTransformerConfig::load(spec));
    }
    throw Error(ErrorCode::config_error,
                "model '" + spec + "' not found; pass a tiny transformer config path "
                "(pretrained adapters are loaded through the same interface but none is bundled)");
}

struct RunScaffold {
    std::string dir;
    RunManifest manifest;
    std::string manifest_path;

    void finish(const std::string& status) {
        manifest.finished_at = iso8601_now();
        manifest.status = status;
        manifest.save(manifest_path);
    }

    void add_artifact(const std::string& path) {
        manifest.artifacts.push_back(fs::relative(path, dir).string());
    }
};

RunScaffold start_run(const RunConfig& rc, const std::string& kind) {
    RunScaffold scaffold;
    std::string run_id = kind;
    if (rc.protocol == Protocol::single || rc.protocol == Protocol::sequential ||
        rc.protocol == Protocol::cross_type) {
        run_id += std::string("-") + editor_kind_name(rc.editor.kind);
    }
    run_id += "-s" + std::to_string(rc.seeds.empty() ? 0 : rc.seeds.front());
    run_id += "-" + rc.digest().substr(0, 8);
    scaffold.dir = create_run_dir(rc.output_dir, run_id);
    scaffold.manifest.run_id = fs::path(scaffold.dir).filename().string();
    scaffold.manifest.config_hash = rc.digest();
    scaffold.manifest.started_at = iso8601_now();
    scaffold.manifest.seeds = rc.seeds;
    scaffold.manifest_path = (fs::path(scaffold.dir) / "manifest.json").string();
    scaffold.manifest.save(scaffold.manifest_path); // manifest first
    return scaffold;
}

std::vector<KnowledgeProbe> load_probe_set(const RunConfig& rc) {
    if (rc.probes_path.empty()) return {};
    std::vector<KnowledgeProbe> probes = load_probes(rc.probes_path);
    if (!rc.full_probes) {
        probes = sample_probes(probes, rc.knowledge_probe_count, rc.probe_sample_seed);
    }
    return probes;
}

struct ProtocolSetup {
    std::unique_ptr<TinyTransformer> model;
    std::vector<SentencePair> edit_pairs;
    std::vector<SentencePair> train_pairs;
    std::vector<KnowledgeProbe> probes;
    EditorContext ctx;
    std::unique_ptr<PosTagger> tagger;
    std::unique_ptr<DemoStore> demo_store;
    ProtocolOptions options;
};

ProtocolSetup prepare_protocol(const RunConfig& rc, const std::string& run_id) {
    ProtocolSetup setup;
    setup.model = load_model(rc.model);
    setup.edit_pairs = load_dataset(rc.dataset_path);
    auto violations = validate_dataset(setup.edit_pairs,
                                       SubjectMatchConfig{!rc.case_insensitive_subjects});
    if (!violations.empty()) {
        std::string detail;
        for (const auto& v : violations) {
            detail += "\n  " + v.case_id + "/" + v.field + ": " + v.message;
        }
        throw Error(ErrorCode::format_error, "dataset fails validation:" + detail);
    }
    setup.probes = load_probe_set(rc);

    std::vector<std::string> corpus;
    for (const SentencePair& p : setup.edit_pairs) {
        corpus.push_back(p.sentence_less);
        corpus.push_back(p.sentence_more);
    }
    setup.ctx.covariances =
        CovarianceCache(setup.model.get(), corpus, rc.editor.covariance_ridge);
    setup.ctx.embed = make_ngram_embedding();
    setup.ctx.length_normalized = rc.length_normalized;

    if (rc.editor.kind == EditorKind::IKE) {
        if (rc.protocol != Protocol::single) {
            throw Error(ErrorCode::unsupported_protocol, "IKE supports single-edit only");
        }
        if (!rc.train_dataset_path.empty()) {
            setup.train_pairs = load_dataset(rc.train_dataset_path);
        } else {
            std::cerr << "IKE: no train split given; building demonstrations from the edit split\n";
            setup.train_pairs = setup.edit_pairs;
        }
        setup.demo_store = std::make_unique<DemoStore>(
            DemoStore::build(*setup.model, setup.train_pairs, setup.probes, setup.ctx.embed));
        setup.ctx.demo_store = setup.demo_store.get();
    }

    setup.options.run_id = run_id;
    setup.options.selection = rc.selection;
    setup.options.trace = rc.trace;
    if (setup.options.trace.sigma_sample.empty()) {
        for (const SentencePair& p : setup.edit_pairs) {
            setup.options.trace.sigma_sample.push_back(p.sentence_less);
        }
    }
    setup.options.match.case_sensitive = !rc.case_insensitive_subjects;
    setup.options.strict_backward = rc.strict_backward;
    if (rc.selection == TargetSelection::rule) {
        setup.tagger = make_rule_based_tagger();
        setup.options.tagger = setup.tagger.get();
    }
    rc.editor.validate(*setup.model);
    return setup;
}

void write_audit(RunScaffold& scaffold, const std::vector<std::string>& audit_lines) {
    if (audit_lines.empty()) return;
    std::string path = (fs::path(scaffold.dir) / "selection_audit.jsonl").string();
    std::ofstream out(path, std::ios::app);
    for (const std::string& line : audit_lines) out << line << "\n";
    scaffold.add_artifact(path);
}

// --- subcommand bodies ---

int cmd_build_data(const CommonFlags& flags, uint64_t split_seed_flag, double train_ratio,
                   double val_ratio, double edit_ratio) {
    RunConfig rc = resolve_config(flags, Protocol::single);
    if (train_ratio > 0) rc.split_ratios = SplitRatios{train_ratio, val_ratio, edit_ratio};
    if (split_seed_flag != UINT64_MAX) rc.split_seed = split_seed_flag;
    std::vector<std::string> problems = rc.validate();
    if (rc.dataset_path.empty()) problems.push_back("global.dataset: missing");
    if (!problems.empty()) return config_failure(problems);

    RunScaffold scaffold = start_run(rc, "build-data");
    std::unique_ptr<TinyTransformer> model = load_model(rc.model);
    std::vector<SentencePair> raw = load_dataset(rc.dataset_path);
    SubjectMatchConfig match{!rc.case_insensitive_subjects};

    auto violations = validate_dataset(raw, match);
    std::vector<SentencePair> usable;
    std::vector<std::pair<std::string, std::string>> rejected;
    {
        std::set<std::string> bad_ids;
        for (const auto& v : violations) {
            bad_ids.insert(v.case_id);
            rejected.emplace_back(v.case_id, v.field + ": " + v.message);
        }
        for (const SentencePair& p : raw) {
            if (bad_ids.count(p.case_id)) continue;
            try {
                make_edit_request(p, *model, match);
                usable.push_back(p);
            } catch (const Error& e) {
                rejected.emplace_back(p.case_id, e.what());
            }
        }
    }

    std::vector<SentencePair> biased = filter_biased(*model, usable, rc.length_normalized);
    Splits splits = make_splits(biased, rc.split_ratios, rc.split_seed, model->model_id());

    for (const auto& [name, split] :
         std::initializer_list<std::pair<const char*, const DatasetSplit*>>{
             {"train", &splits.train}, {"val", &splits.val}, {"edit", &splits.edit}}) {
        std::string path = (fs::path(scaffold.dir) / (std::string(name) + ".json")).string();
        save_dataset(split->pairs, path);
        scaffold.add_artifact(path);
    }
    {
        std::string path = (fs::path(scaffold.dir) / "build_report.json").string();
        nlohmann::json report{{"input_pairs", raw.size()},
                              {"usable_pairs", usable.size()},
                              {"biased_pairs", biased.size()},
                              {"filtering_model_id", model->model_id()},
                              {"train", splits.train.pairs.size()},
                              {"val", splits.val.pairs.size()},
                              {"edit", splits.edit.pairs.size()}};
        nlohmann::json rj = nlohmann::json::array();
        for (const auto& [id, why] : rejected) {
            rj.push_back(nlohmann::json{{"case_id", id}, {"reason", why}});
        }
        report["rejected"] = rj;
        std::ofstream out(path);
        out << report.dump(2) << "\n";
        scaffold.add_artifact(path);
    }
    scaffold.finish("completed");
    std::cout << "build-data: " << biased.size() << " biased pairs -> train "
              << splits.train.pairs.size() << ", val " << splits.val.pairs.size() << ", edit "
              << splits.edit.pairs.size() << "\nrun dir: " << scaffold.dir << "\n";
    return kExitOk;
}

int cmd_stats(const CommonFlags& flags) {
    RunConfig rc = resolve_config(flags, Protocol::single);
    std::vector<std::string> problems = rc.validate();
    if (rc.dataset_path.empty()) problems.push_back("global.dataset: missing");
    if (!problems.empty()) return config_failure(problems);

    RunScaffold scaffold = start_run(rc, "stats");
    std::unique_ptr<TinyTransformer> model = load_model(rc.model);
    std::vector<SentencePair> pairs = load_dataset(rc.dataset_path);
    std::vector<StatsRow> rows =
        compute_stats(pairs, *model, SubjectMatchConfig{!rc.case_insensitive_subjects});

    std::vector<std::vector<std::string>> csv;
    csv.push_back({"bias_type", "count", "prompt_mean", "prompt_std", "target_mean",
                   "target_std"});
    for (const StatsRow& row : rows) {
        csv.push_back({row.bias_type, std::to_string(row.count), format_metric(row.prompt_mean),
                       format_metric(row.prompt_std), format_metric(row.target_mean),
                       format_metric(row.target_std)});
    }
    std::string path = (fs::path(scaffold.dir) / "stats.csv").string();
    write_csv(path, csv);
    scaffold.add_artifact(path);
    scaffold.finish("completed");

    for (const auto& row : csv) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i > 0) std::cout << ",";
            std::cout << row[i];
        }
        std::cout << "\n";
    }
    std::cout << "run dir: " << scaffold.dir << "\n";
    return kExitOk;
}

int cmd_paraphrase(const CommonFlags& flags, const std::string& endpoint,
                   const std::string& model_name, int retries, bool debug_bodies) {
    RunConfig rc = resolve_config(flags, Protocol::single);
    std::vector<std::string> problems;
    if (rc.dataset_path.empty() || !fs::exists(rc.dataset_path)) {
        problems.push_back("global.dataset: missing or not found");
    }
    if (endpoint.empty()) problems.push_back("paraphrase.endpoint: missing");
    if (!problems.empty()) return config_failure(problems);

    RunScaffold scaffold = start_run(rc, "paraphrase");
    HttpClientConfig http;
    http.endpoint_url = endpoint;
    http.model_name = model_name;
    http.debug_log_bodies = debug_bodies;
    std::unique_ptr<TextGenClient> client = make_http_client(http);
    ParaphraseOptions opts;
    opts.max_retries = retries;

    std::vector<SentencePair> pairs = load_dataset(rc.dataset_path);
    size_t generated = 0;
    for (SentencePair& pair : pairs) {
        if (pair.paraphrases_more.empty()) {
            pair.paraphrases_more =
                generate_paraphrases(*client, pair.sentence_more, pair.subject, opts);
            ++generated;
        }
        if (pair.paraphrases_less.empty()) {
            pair.paraphrases_less =
                generate_paraphrases(*client, pair.sentence_less, pair.subject, opts);
            ++generated;
        }
    }
    std::string path = (fs::path(scaffold.dir) / "paraphrased.json").string();
    save_dataset(pairs, path);
    scaffold.add_artifact(path);
    scaffold.finish("completed");
    std::cout << "paraphrase: generated " << generated << " paraphrase sets -> " << path << "\n";
    return kExitOk;
}

int run_protocol_command(const CommonFlags& flags, Protocol protocol, const std::string& kind) {
    RunConfig rc = resolve_config(flags, protocol);
    std::vector<std::string> problems = rc.validate();
    if (rc.dataset_path.empty()) problems.push_back("global.dataset: missing");
    if (!problems.empty()) return config_failure(problems);

    RunScaffold scaffold = start_run(rc, kind);
    try {
        ProtocolSetup setup = prepare_protocol(rc, scaffold.manifest.run_id);
        // Baseline snapshot stored as an opaque blob keyed by snapshot id.
        fs::create_directories(fs::path(scaffold.dir) / "snapshots");
        ModelSnapshot baseline = setup.model->capture_snapshot();
        std::string snap_path =
            (fs::path(scaffold.dir) / "snapshots" / (baseline.snapshot_id + ".bin")).string();
        baseline.save(snap_path);
        scaffold.add_artifact(snap_path);

        std::string records_path = (fs::path(scaffold.dir) / "records.jsonl").string();
        RecordWriter writer(records_path);
        std::unique_ptr<EditorDriver> driver = make_editor_driver(rc.editor, setup.ctx);

        for (uint64_t seed : rc.seeds) {
            setup.options.seed = seed;
            if (protocol == Protocol::single) {
                ProtocolResult result = run_single_edit(*setup.model, *driver, setup.edit_pairs,
                                                        setup.probes, setup.options);
                writer.append(result.records);
                write_audit(scaffold, result.selection_audit);
            } else if (protocol == Protocol::sequential) {
                ProtocolPlan plan = rc.plan_from_config
                                        ? rc.plan
                                        : ProtocolPlan::default_plan(setup.edit_pairs.size());
                plan.edit_order_seed = seed;
                ProtocolResult result = run_sequential_edit(*setup.model, *driver,
                                                            setup.edit_pairs, setup.probes, plan,
                                                            setup.options);
                writer.append(result.records);
                write_audit(scaffold, result.selection_audit);
            } else if (protocol == Protocol::cross_type) {
                CrossTypeResult result = run_cross_type(*setup.model, *driver, setup.edit_pairs,
                                                        setup.probes, setup.options);
                writer.append(result.result.records);
                write_audit(scaffold, result.result.selection_audit);
            }
        }
        scaffold.add_artifact(records_path);

        // Derived views.
        std::vector<MetricRecord> records = read_records(records_path);
        TableShape shape = protocol == Protocol::single
                               ? TableShape::single
                               : (protocol == Protocol::sequential ? TableShape::sequential
                                                                   : TableShape::cross_type);
        for (const std::string& path :
             emit_tables(records, shape, (fs::path(scaffold.dir) / "tables").string())) {
            scaffold.add_artifact(path);
        }
        if (protocol == Protocol::sequential) {
            for (const std::string& path :
                 emit_curves(records, (fs::path(scaffold.dir) / "curves").string())) {
                scaffold.add_artifact(path);
            }
        }
        scaffold.finish("completed");
        std::cout << kind << ": records written to " << records_path << "\nrun dir: "
                  << scaffold.dir << "\n";
        return kExitOk;
    } catch (const Error& e) {
        scaffold.finish("failed");
        if (e.code() == ErrorCode::unsupported_protocol) {
            std::cerr << e.what() << "\n";
            return kExitConfig;
        }
        throw;
    }
}

int cmd_bench(const CommonFlags& flags) {
    RunConfig rc = resolve_config(flags, Protocol::pairwise_bench);
    std::vector<std::string> problems = rc.validate();
    if (rc.benchmark_path.empty()) problems.push_back("global.benchmark: missing");
    if (!problems.empty()) return config_failure(problems);

    RunScaffold scaffold = start_run(rc, "bench");
    std::unique_ptr<TinyTransformer> model = load_model(rc.model);
    std::vector<SentencePair> pairs = load_dataset(rc.benchmark_path);
    ProtocolOptions options;
    options.run_id = scaffold.manifest.run_id;
    std::unique_ptr<Scorer> scorer = make_plain_scorer(*model, rc.length_normalized);
    MetricRecord rec = run_pairwise_benchmark(*scorer, pairs, "before-edit", options);
    std::string records_path = (fs::path(scaffold.dir) / "records.jsonl").string();
    RecordWriter writer(records_path);
    writer.append(rec);
    scaffold.add_artifact(records_path);
    scaffold.finish("completed");
    std::cout << "bench: " << (rec.success_rate ? format_metric(*rec.success_rate) : "n/a")
              << "% of pairs prefer the stereotypical sentence (lower is better)\n"
              << "run dir: " << scaffold.dir << "\n";
    return kExitOk;
}

int cmd_report(const std::string& run_dir, const std::string& shape_name) {
    std::string records_path = (fs::path(run_dir) / "records.jsonl").string();
    if (!fs::exists(records_path)) {
        std::cerr << "no records.jsonl under " << run_dir << "\n";
        return kExitConfig;
    }
    std::vector<MetricRecord> records = read_records(records_path);
    std::vector<std::string> written;
    auto emit_shape = [&](TableShape shape) {
        for (const std::string& path :
             emit_tables(records, shape, (fs::path(run_dir) / "tables").string())) {
            written.push_back(path);
        }
        if (shape == TableShape::sequential) {
            for (const std::string& path :
                 emit_curves(records, (fs::path(run_dir) / "curves").string())) {
                written.push_back(path);
            }
        }
    };
    if (shape_name.empty()) {
        // Emit every shape the records support.
        for (TableShape shape :
             {TableShape::single, TableShape::sequential, TableShape::cross_type}) {
            try {
                emit_shape(shape);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::report_error) throw;
            }
        }
        if (written.empty()) {
            std::cerr << "records match no report shape\n";
            return kExitFailure;
        }
    } else if (shape_name == "single") {
        emit_shape(TableShape::single);
    } else if (shape_name == "sequential") {
        emit_shape(TableShape::sequential);
    } else if (shape_name == "cross_type") {
        emit_shape(TableShape::cross_type);
    } else {
        std::cerr << "unknown shape '" << shape_name << "'\n";
        return kExitUsage;
    }
    // Update the manifest so every artifact stays reachable from it.
    std::string manifest_path = (fs::path(run_dir) / "manifest.json").string();
    if (fs::exists(manifest_path)) {
        RunManifest manifest = RunManifest::load(manifest_path);
        for (const std::string& path : written) {
            std::string rel = fs::relative(path, run_dir).string();
            if (std::find(manifest.artifacts.begin(), manifest.artifacts.end(), rel) ==
                manifest.artifacts.end()) {
                manifest.artifacts.push_back(rel);
            }
        }
        manifest.save(manifest_path);
    }
    for (const std::string& path : written) std::cout << path << "\n";
    return kExitOk;
}

} // namespace

int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"debiaslab: stereotype debiasing with model editing, at desk scale"};
    app.require_subcommand(1);

    CommonFlags flags;
    // build-data
    auto* build = app.add_subcommand("build-data", "ingest, filter, and split a pair dataset");
    double train_ratio = 0, val_ratio = 0, edit_ratio = 0;
    uint64_t split_seed = UINT64_MAX;
    add_common_flags(build, flags, false);
    build->add_option("--train-ratio", train_ratio);
    build->add_option("--val-ratio", val_ratio);
    build->add_option("--edit-ratio", edit_ratio);
    build->add_option("--split-seed", split_seed);

    auto* stats = app.add_subcommand("stats", "dataset statistics table");
    add_common_flags(stats, flags, false);

    auto* paraphrase = app.add_subcommand("paraphrase", "generate paraphrases via a text endpoint");
    std::string endpoint, para_model = "gpt-3.5-turbo";
    int retries = 2;
    bool debug_bodies = false;
    add_common_flags(paraphrase, flags, false);
    paraphrase->add_option("--endpoint", endpoint, "chat-completions endpoint URL");
    paraphrase->add_option("--model-name", para_model, "generation model name");
    paraphrase->add_option("--retries", retries, "retries when a paraphrase drops the subject");
    paraphrase->add_flag("--debug-bodies", debug_bodies, "log request/response bodies");

    auto* edit = app.add_subcommand("edit", "single-edit protocol");
    add_common_flags(edit, flags, true);

    auto* seq = app.add_subcommand("seq-edit", "sequential-edit protocol");
    add_common_flags(seq, flags, true);

    auto* cross = app.add_subcommand("cross-type", "cross-bias-type generalization matrix");
    add_common_flags(cross, flags, true);

    auto* bench = app.add_subcommand("bench", "pairwise bias benchmark on the base model");
    add_common_flags(bench, flags, false);
    bench->add_option("--benchmark", flags.benchmark, "benchmark pair file")->required();

    auto* report = app.add_subcommand("report", "regenerate tables and plots from records");
    std::string report_dir, report_shape;
    report->add_option("--run", report_dir, "run directory containing records.jsonl")->required();
    report->add_option("--shape", report_shape, "single | sequential | cross_type");

    std::vector<const char*> argv;
    argv.push_back("debiaslab");
    for (const std::string& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (build->parsed()) {
            return cmd_build_data(flags, split_seed, train_ratio, val_ratio, edit_ratio);
        }
        if (stats->parsed()) return cmd_stats(flags);
        if (paraphrase->parsed()) {
            return cmd_paraphrase(flags, endpoint, para_model, retries, debug_bodies);
        }
        if (edit->parsed()) return run_protocol_command(flags, Protocol::single, "edit");
        if (seq->parsed()) {
            if (!flags.editor.empty() &&
                editor_kind_from_string(flags.editor) == EditorKind::IKE) {
                std::cerr << "IKE supports single-edit only\n";
                return kExitConfig;
            }
            return run_protocol_command(flags, Protocol::sequential, "seq-edit");
        }
        if (cross->parsed()) {
            if (!flags.editor.empty() &&
                editor_kind_from_string(flags.editor) == EditorKind::IKE) {
                std::cerr << "IKE supports single-edit only\n";
                return kExitConfig;
            }
            return run_protocol_command(flags, Protocol::cross_type, "cross-type");
        }
        if (bench->parsed()) return cmd_bench(flags);
        if (report->parsed()) return cmd_report(report_dir, report_shape);
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return e.code() == ErrorCode::config_error ? kExitConfig : kExitFailure;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

} // namespace debiaslab::cli
