#include "debiaslab/run_config.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "debiaslab/error.hpp"

namespace debiaslab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string env_normalize(const std::string& name) {
    std::string out;
    for (char c : name) {
        if (c == '.' || c == '-') {
            out.push_back('_');
        } else {
            out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
        }
    }
    return out;
}

uint64_t fnv1a(const std::string& data) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

const std::vector<std::string>& known_sections() {
    static const std::vector<std::string> sections = {
        "global",        "protocol",      "paraphrase",   "editor.FT",  "editor.FT-L",
        "editor.ROME",   "editor.MEMIT",  "editor.SERAC", "editor.IKE", "selection",
    };
    return sections;
}

} // namespace

ConfigFile ConfigFile::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::io_error, "cannot open config file: " + path);
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_string(buffer.str(), path);
}

ConfigFile ConfigFile::parse_string(const std::string& text, const std::string& origin) {
    ConfigFile cfg;
    std::istringstream in(text);
    std::string line;
    std::string section = "global";
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#' || s[0] == ';') continue;
        if (s.front() == '[') {
            if (s.back() != ']') {
                throw Error(ErrorCode::config_error,
                            origin + ":" + std::to_string(lineno) + ": unterminated section");
            }
            section = trim(s.substr(1, s.size() - 2));
            cfg.sections_[section];
            continue;
        }
        size_t eq = s.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorCode::config_error,
                        origin + ":" + std::to_string(lineno) + ": expected key = value");
        }
        cfg.sections_[section][trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
    }
    return cfg;
}

void ConfigFile::apply_env_overrides(const EnvLookup& lookup) {
    auto env = lookup ? lookup : [](const std::string& name) { return std::getenv(name.c_str()); };
    // Candidate sections: all known plus any present in the file.
    std::vector<std::string> candidates = known_sections();
    for (const auto& [section, kv] : sections_) {
        if (std::find(candidates.begin(), candidates.end(), section) == candidates.end()) {
            candidates.push_back(section);
        }
    }
    // Existing keys get direct overrides.
    for (auto& [section, kv] : sections_) {
        for (auto& [key, value] : kv) {
            std::string var = kEnvPrefix + env_normalize(section) + "_" + env_normalize(key);
            if (const char* v = env(var)) value = v;
        }
    }
    // New keys can also arrive purely from the environment for known keys of
    // the global/protocol sections; callers read them via get().
    static const std::vector<std::pair<std::string, std::string>> well_known = {
        {"global", "model"},         {"global", "dataset"},       {"global", "probes"},
        {"global", "output_dir"},    {"global", "length_normalized"},
        {"global", "target_selection"}, {"global", "seeds"},      {"protocol", "checkpoints"},
        {"protocol", "edit_order_seed"},
    };
    for (const auto& [section, key] : well_known) {
        std::string var = kEnvPrefix + env_normalize(section) + "_" + env_normalize(key);
        if (const char* v = env(var)) sections_[section][key] = v;
    }
}

std::optional<std::string> ConfigFile::get(const std::string& section,
                                           const std::string& key) const {
    auto sit = sections_.find(section);
    if (sit == sections_.end()) return std::nullopt;
    auto kit = sit->second.find(key);
    if (kit == sit->second.end()) return std::nullopt;
    return kit->second;
}

std::string ConfigFile::get_or(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
    auto v = get(section, key);
    return v.has_value() ? *v : fallback;
}

void ConfigFile::set(const std::string& section, const std::string& key,
                     const std::string& value) {
    sections_[section][key] = value;
}

bool ConfigFile::has_section(const std::string& section) const {
    return sections_.count(section) > 0;
}

double ConfigFile::get_double(const std::string& section, const std::string& key,
                              double fallback) const {
    auto v = get(section, key);
    if (!v) return fallback;
    try {
        return std::stod(*v);
    } catch (const std::exception&) {
        throw Error(ErrorCode::config_error, section + "." + key + ": not a number: " + *v);
    }
}

int ConfigFile::get_int(const std::string& section, const std::string& key, int fallback) const {
    auto v = get(section, key);
    if (!v) return fallback;
    try {
        return std::stoi(*v);
    } catch (const std::exception&) {
        throw Error(ErrorCode::config_error, section + "." + key + ": not an integer: " + *v);
    }
}

uint64_t ConfigFile::get_u64(const std::string& section, const std::string& key,
                             uint64_t fallback) const {
    auto v = get(section, key);
    if (!v) return fallback;
    try {
        return std::stoull(*v);
    } catch (const std::exception&) {
        throw Error(ErrorCode::config_error, section + "." + key + ": not an integer: " + *v);
    }
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key,
                          bool fallback) const {
    auto v = get(section, key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw Error(ErrorCode::config_error, section + "." + key + ": not a boolean: " + *v);
}

std::string ConfigFile::canonical() const {
    std::ostringstream out;
    for (const auto& [section, kv] : sections_) {
        out << "[" << section << "]\n";
        for (const auto& [key, value] : kv) {
            out << key << " = " << value << "\n";
        }
    }
    return out.str();
}

// ---------------------------------------------------------------------------

RunConfig run_config_from_file(const ConfigFile& file, const std::string& editor_kind) {
    RunConfig rc;
    rc.model = file.get_or("global", "model", "");
    rc.dataset_path = file.get_or("global", "dataset", "");
    rc.train_dataset_path = file.get_or("global", "train_dataset", "");
    rc.probes_path = file.get_or("global", "probes", "");
    rc.benchmark_path = file.get_or("global", "benchmark", "");
    rc.output_dir = file.get_or("global", "output_dir", "runs");
    rc.length_normalized = file.get_bool("global", "length_normalized", false);
    rc.strict_backward = file.get_bool("global", "strict_backward", false);
    rc.case_insensitive_subjects = file.get_bool("global", "case_insensitive_subjects", false);
    rc.knowledge_probe_count =
        static_cast<size_t>(file.get_int("global", "knowledge_probe_count", 50));
    rc.full_probes = file.get_bool("global", "full_probes", false);
    rc.probe_sample_seed = file.get_u64("global", "probe_sample_seed", 0);
    rc.selection = target_selection_from_string(
        file.get_or("global", "target_selection", "none"));
    rc.split_ratios.train = file.get_double("global", "train_ratio", 0.5);
    rc.split_ratios.val = file.get_double("global", "val_ratio", 0.1);
    rc.split_ratios.edit = file.get_double("global", "edit_ratio", 0.4);
    rc.split_seed = file.get_u64("global", "split_seed", 0);

    if (auto seeds = file.get("global", "seeds")) {
        rc.seeds.clear();
        std::istringstream in(*seeds);
        std::string tok;
        while (std::getline(in, tok, ',')) {
            std::string t = trim(tok);
            if (!t.empty()) rc.seeds.push_back(std::stoull(t));
        }
    }

    rc.editor.kind = editor_kind_from_string(editor_kind);
    const std::string section = "editor." + editor_kind;
    rc.editor.layer = file.get_int(section, "layer", rc.editor.layer);
    rc.editor.layer_range.first = file.get_int(section, "layer_from", rc.editor.layer_range.first);
    rc.editor.layer_range.second =
        file.get_int(section, "layer_to", rc.editor.layer_range.second);
    rc.editor.learning_rate = file.get_double(section, "learning_rate", rc.editor.learning_rate);
    rc.editor.max_steps = file.get_int(section, "max_steps", rc.editor.max_steps);
    rc.editor.stop_nll_per_token =
        file.get_double(section, "stop_nll_per_token", rc.editor.stop_nll_per_token);
    rc.editor.linf_bound = file.get_double(section, "linf_bound", rc.editor.linf_bound);
    rc.editor.kl_weight = file.get_double(section, "kl_weight", rc.editor.kl_weight);
    rc.editor.value_steps = file.get_int(section, "value_steps", rc.editor.value_steps);
    rc.editor.value_step_size =
        file.get_double(section, "value_step_size", rc.editor.value_step_size);
    if (auto ridge = file.get(section, "covariance_ridge")) {
        rc.editor.covariance_ridge = std::stod(*ridge);
    }
    rc.editor.scope_threshold =
        file.get_double(section, "scope_threshold", rc.editor.scope_threshold);
    rc.editor.counterfactual_alpha =
        file.get_double(section, "counterfactual_alpha", rc.editor.counterfactual_alpha);
    rc.editor.demos_k = file.get_int(section, "demos_k", rc.editor.demos_k);

    if (auto checkpoints = file.get("protocol", "checkpoints")) {
        rc.plan_from_config = true;
        std::istringstream in(*checkpoints);
        std::string tok;
        while (std::getline(in, tok, ',')) {
            std::string t = trim(tok);
            if (!t.empty()) rc.plan.checkpoints.push_back(std::stoi(t));
        }
        for (int c : rc.plan.checkpoints) {
            rc.plan.runs_per_checkpoint[c] =
                file.get_int("protocol", "runs_at_" + std::to_string(c), c <= 16 ? 10 : 3);
        }
    }
    rc.plan.edit_order_seed = file.get_u64("protocol", "edit_order_seed", 0);

    rc.trace.top_k = file.get_int("selection", "top_k", rc.trace.top_k);
    rc.trace.sigma_multiplier =
        file.get_double("selection", "sigma_multiplier", rc.trace.sigma_multiplier);
    rc.trace.num_samples = file.get_int("selection", "num_samples", rc.trace.num_samples);
    rc.trace.noise_seed = file.get_u64("selection", "noise_seed", rc.trace.noise_seed);
    return rc;
}

std::vector<std::string> RunConfig::validate() const {
    std::vector<std::string> problems;
    if (model.empty()) {
        problems.push_back("global.model: missing");
    } else if (model.find(".cfg") != std::string::npos || fs::exists(model)) {
        if (!fs::exists(model)) problems.push_back("global.model: path does not exist: " + model);
    }
    if (!dataset_path.empty() && !fs::exists(dataset_path)) {
        problems.push_back("global.dataset: path does not exist: " + dataset_path);
    }
    if (!train_dataset_path.empty() && !fs::exists(train_dataset_path)) {
        problems.push_back("global.train_dataset: path does not exist: " + train_dataset_path);
    }
    if (!probes_path.empty() && !fs::exists(probes_path)) {
        problems.push_back("global.probes: path does not exist: " + probes_path);
    }
    if (!benchmark_path.empty() && !fs::exists(benchmark_path)) {
        problems.push_back("global.benchmark: path does not exist: " + benchmark_path);
    }
    if (seeds.empty()) {
        problems.push_back("global.seeds: at least one seed required");
    }
    if (editor.kind == EditorKind::IKE && protocol != Protocol::single) {
        problems.push_back("editor/protocol: IKE supports single-edit only");
    }
    return problems;
}

std::string RunConfig::canonical() const {
    std::ostringstream out;
    out << "model=" << model << "\ndataset=" << dataset_path << "\nprobes=" << probes_path
        << "\nbenchmark=" << benchmark_path << "\noutput_dir=" << output_dir
        << "\neditor=" << editor_kind_name(editor.kind) << "\nlayer=" << editor.layer
        << "\nlayer_range=" << editor.layer_range.first << ".." << editor.layer_range.second
        << "\nlearning_rate=" << editor.learning_rate << "\nmax_steps=" << editor.max_steps
        << "\nstop_nll_per_token=" << editor.stop_nll_per_token
        << "\nlinf_bound=" << editor.linf_bound << "\nkl_weight=" << editor.kl_weight
        << "\nvalue_steps=" << editor.value_steps
        << "\nvalue_step_size=" << editor.value_step_size << "\ncovariance_ridge="
        << (editor.covariance_ridge ? std::to_string(*editor.covariance_ridge) : "auto")
        << "\nscope_threshold=" << editor.scope_threshold
        << "\ncounterfactual_alpha=" << editor.counterfactual_alpha
        << "\ndemos_k=" << editor.demos_k << "\nprotocol=" << protocol_name(protocol)
        << "\nselection=" << target_selection_name(selection)
        << "\nlength_normalized=" << length_normalized
        << "\nstrict_backward=" << strict_backward
        << "\nknowledge_probe_count=" << knowledge_probe_count << "\nfull_probes=" << full_probes
        << "\ntrace.top_k=" << trace.top_k << "\ntrace.sigma_multiplier=" << trace.sigma_multiplier
        << "\ntrace.num_samples=" << trace.num_samples << "\ntrace.noise_seed=" << trace.noise_seed
        << "\nsplit=" << split_ratios.train << "/" << split_ratios.val << "/" << split_ratios.edit
        << "@" << split_seed << "\nseeds=";
    for (size_t i = 0; i < seeds.size(); ++i) {
        if (i > 0) out << ",";
        out << seeds[i];
    }
    out << "\nplan=";
    for (size_t i = 0; i < plan.checkpoints.size(); ++i) {
        if (i > 0) out << ",";
        out << plan.checkpoints[i] << ":" << plan.runs_at(plan.checkpoints[i]);
    }
    out << "@" << plan.edit_order_seed << "\n";
    return out.str();
}

std::string RunConfig::digest() const {
    std::ostringstream out;
    out << std::hex << fnv1a(canonical());
    return out.str();
}

// ---------------------------------------------------------------------------

void RunManifest::save(const std::string& path) const {
    json j{{"run_id", run_id},
           {"config_hash", config_hash},
           {"started_at", started_at},
           {"finished_at", finished_at},
           {"software_version", software_version},
           {"seeds", seeds},
           {"status", status},
           {"artifacts", artifacts}};
    std::ofstream out(path);
    if (!out) {
        throw Error(ErrorCode::io_error, "cannot write manifest: " + path);
    }
    out << j.dump(2) << "\n";
}

RunManifest RunManifest::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::io_error, "cannot open manifest: " + path);
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::format_error, path + ": " + e.what());
    }
    RunManifest m;
    m.run_id = j.at("run_id").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.started_at = j.at("started_at").get<std::string>();
    m.finished_at = j.value("finished_at", "");
    m.software_version = j.at("software_version").get<std::string>();
    m.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    m.status = j.at("status").get<std::string>();
    m.artifacts = j.at("artifacts").get<std::vector<std::string>>();
    return m;
}

std::string iso8601_now() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string create_run_dir(const std::string& output_dir, const std::string& run_id) {
    fs::create_directories(output_dir);
    fs::path base = fs::path(output_dir) / run_id;
    fs::path dir = base;
    int suffix = 2;
    while (fs::exists(dir)) {
        dir = base;
        dir += "-" + std::to_string(suffix++);
    }
    fs::create_directories(dir);
    return dir.string();
}

} // namespace debiaslab
