#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace debiaslab {

enum class Protocol { single, sequential, cross_type, pairwise_bench };
const char* protocol_name(Protocol protocol);
Protocol protocol_from_string(const std::string& name);

enum class Population { edited, unedited };
const char* population_name(Population population);

inline constexpr int kRecordSchemaVersion = 1;

// One evaluation row, persisted append-only as a JSON line.
struct MetricRecord {
    int schema_version = kRecordSchemaVersion;
    std::string run_id;
    Protocol protocol = Protocol::single;
    std::string editor_kind;
    uint64_t seed = 0;
    int n_edits = 0;
    int checkpoint = 0;
    Population population = Population::edited;
    std::string scope = "aggregate"; // "pair", "run", or "aggregate"
    std::optional<std::string> case_id;
    std::optional<std::string> edit_bias_type; // cross-type rows
    std::optional<std::string> eval_bias_type; // cross-type rows
    std::optional<double> success_rate;
    std::optional<double> knowledge_acc;
    std::optional<double> gen_forward;
    std::optional<double> gen_backward;
    std::optional<double> average;
    // Aggregate rows carry the population spread across runs.
    std::optional<double> success_std;
    std::optional<double> knowledge_std;
    std::optional<double> gen_forward_std;
    std::optional<double> gen_backward_std;
    std::optional<int> n_runs;
    std::optional<bool> edit_flagged; // per-pair rows
    std::optional<std::string> note;

    std::string to_json_line() const;
    static MetricRecord from_json_line(const std::string& line);
};

// Serialized writer appending JSON lines to one record file.
class RecordWriter {
  public:
    explicit RecordWriter(const std::string& path);
    void append(const MetricRecord& record);
    void append(const std::vector<MetricRecord>& records);
    const std::string& path() const { return path_; }

  private:
    std::string path_;
};

std::vector<MetricRecord> read_records(const std::string& path);

} // namespace debiaslab
