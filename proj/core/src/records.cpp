#include "debiaslab/records.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "debiaslab/error.hpp"

namespace debiaslab {

using nlohmann::json;

const char* protocol_name(Protocol protocol) {
    switch (protocol) {
        case Protocol::single: return "single";
        case Protocol::sequential: return "sequential";
        case Protocol::cross_type: return "cross_type";
        case Protocol::pairwise_bench: return "pairwise_bench";
    }
    return "single";
}

Protocol protocol_from_string(const std::string& name) {
    if (name == "single") return Protocol::single;
    if (name == "sequential") return Protocol::sequential;
    if (name == "cross_type") return Protocol::cross_type;
    if (name == "pairwise_bench") return Protocol::pairwise_bench;
    throw Error(ErrorCode::format_error, "unknown protocol '" + name + "'");
}

const char* population_name(Population population) {
    return population == Population::edited ? "edited" : "unedited";
}

namespace {

void put_optional(json& j, const char* key, const std::optional<double>& value) {
    if (value.has_value()) j[key] = *value;
    else j[key] = nullptr;
}

std::optional<double> get_optional(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}

} // namespace

std::string MetricRecord::to_json_line() const {
    json j;
    j["schema_version"] = schema_version;
    j["run_id"] = run_id;
    j["protocol"] = protocol_name(protocol);
    j["editor_kind"] = editor_kind;
    j["seed"] = seed;
    j["n_edits"] = n_edits;
    j["checkpoint"] = checkpoint;
    j["population"] = population_name(population);
    j["scope"] = scope;
    if (case_id) j["case_id"] = *case_id;
    if (edit_bias_type) j["edit_bias_type"] = *edit_bias_type;
    if (eval_bias_type) j["eval_bias_type"] = *eval_bias_type;
    put_optional(j, "success_rate", success_rate);
    put_optional(j, "knowledge_acc", knowledge_acc);
    put_optional(j, "gen_forward", gen_forward);
    put_optional(j, "gen_backward", gen_backward);
    put_optional(j, "average", average);
    if (success_std) j["success_std"] = *success_std;
    if (knowledge_std) j["knowledge_std"] = *knowledge_std;
    if (gen_forward_std) j["gen_forward_std"] = *gen_forward_std;
    if (gen_backward_std) j["gen_backward_std"] = *gen_backward_std;
    if (n_runs) j["n_runs"] = *n_runs;
    if (edit_flagged) j["edit_flagged"] = *edit_flagged;
    if (note) j["note"] = *note;
    return j.dump();
}

MetricRecord MetricRecord::from_json_line(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::format_error, std::string("bad record line: ") + e.what());
    }
    MetricRecord r;
    try {
        r.schema_version = j.at("schema_version").get<int>();
        r.run_id = j.at("run_id").get<std::string>();
        r.protocol = protocol_from_string(j.at("protocol").get<std::string>());
        r.editor_kind = j.at("editor_kind").get<std::string>();
        r.seed = j.at("seed").get<uint64_t>();
        r.n_edits = j.at("n_edits").get<int>();
        r.checkpoint = j.at("checkpoint").get<int>();
        r.population = j.at("population").get<std::string>() == "edited" ? Population::edited
                                                                         : Population::unedited;
        r.scope = j.at("scope").get<std::string>();
        if (j.contains("case_id")) r.case_id = j.at("case_id").get<std::string>();
        if (j.contains("edit_bias_type")) r.edit_bias_type = j.at("edit_bias_type").get<std::string>();
        if (j.contains("eval_bias_type")) r.eval_bias_type = j.at("eval_bias_type").get<std::string>();
        r.success_rate = get_optional(j, "success_rate");
        r.knowledge_acc = get_optional(j, "knowledge_acc");
        r.gen_forward = get_optional(j, "gen_forward");
        r.gen_backward = get_optional(j, "gen_backward");
        r.average = get_optional(j, "average");
        r.success_std = get_optional(j, "success_std");
        r.knowledge_std = get_optional(j, "knowledge_std");
        r.gen_forward_std = get_optional(j, "gen_forward_std");
        r.gen_backward_std = get_optional(j, "gen_backward_std");
        if (j.contains("n_runs") && !j.at("n_runs").is_null()) r.n_runs = j.at("n_runs").get<int>();
        if (j.contains("edit_flagged")) r.edit_flagged = j.at("edit_flagged").get<bool>();
        if (j.contains("note")) r.note = j.at("note").get<std::string>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::format_error, std::string("bad record field: ") + e.what());
    }
    return r;
}

RecordWriter::RecordWriter(const std::string& path) : path_(path) {}

void RecordWriter::append(const MetricRecord& record) {
    std::ofstream out(path_, std::ios::app);
    if (!out) {
        throw Error(ErrorCode::io_error, "cannot append to record file: " + path_);
    }
    out << record.to_json_line() << "\n";
}

void RecordWriter::append(const std::vector<MetricRecord>& records) {
    std::ofstream out(path_, std::ios::app);
    if (!out) {
        throw Error(ErrorCode::io_error, "cannot append to record file: " + path_);
    }
    for (const MetricRecord& r : records) {
        out << r.to_json_line() << "\n";
    }
}

std::vector<MetricRecord> read_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::io_error, "cannot open record file: " + path);
    }
    std::vector<MetricRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        records.push_back(MetricRecord::from_json_line(line));
    }
    return records;
}

} // namespace debiaslab
