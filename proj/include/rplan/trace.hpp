#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rplan/error.hpp"
#include "rplan/matrix.hpp"

namespace rplan {

using TokenId = std::int32_t;

enum class CapturePosition { pre_generation_think_token };
enum class CapturePoint { post_block_residual, pre_block_residual };

struct TraceMetadata {
    std::uint32_t format_version = 1;
    std::string model_name;
    std::int64_t n_layers = 0;
    std::int64_t d_model = 0;
    TokenId think_token_id = 0;
    TokenId end_think_token_id = 0;
    TokenId eos_token_id = 0;
    std::vector<int> difficulty_levels;
    CapturePosition capture_position = CapturePosition::pre_generation_think_token;
    CapturePoint capture_point = CapturePoint::post_block_residual;

    bool operator==(const TraceMetadata&) const = default;
};

// One question: activations at the <think> position for every layer (n_layers x d_model,
// layer-major) plus per-rollout token counts.
struct ActivationRecord {
    std::string question_id;
    int difficulty = 0;
    MatrixF activations;
    std::vector<std::int64_t> reasoning_token_counts;
    std::vector<std::int64_t> answer_token_counts;

    bool operator==(const ActivationRecord&) const = default;
};

struct TraceDataset {
    TraceMetadata metadata;
    std::vector<ActivationRecord> records;

    bool operator==(const TraceDataset&) const = default;
};

enum class TraceErrc {
    bad_magic,
    unsupported_version,
    truncated,
    non_finite,
    shape_mismatch,
    duplicate_id,
    invalid_metadata,
    malformed_header,
    trailing_data,
    io_failure,
};

const char* to_string(TraceErrc code);

// Raised by the reader, the writer and validate(). record_index is set when the
// problem is attributable to one record.
class TraceError : public Error {
public:
    TraceError(TraceErrc code, const std::string& what, std::optional<std::size_t> record_index = std::nullopt);

    TraceErrc code() const { return code_; }
    std::optional<std::size_t> record_index() const { return record_index_; }

private:
    TraceErrc code_;
    std::optional<std::size_t> record_index_;
};

// Checks every dataset invariant; throws TraceError on the first violation.
void validate(const TraceDataset& dataset);
void validate(const TraceMetadata& metadata);

// RPT container: "RPLT", u32 version, u32 metadata length, metadata JSON, u64 record
// count, then per record a u32-length header JSON followed by n_layers*d_model f32 values.
// All integers little-endian. Returns the number of bytes written.
std::uint64_t write_trace(const TraceDataset& dataset, std::ostream& sink);
TraceDataset read_trace(std::istream& source);

void save_trace(const TraceDataset& dataset, const std::string& path);
TraceDataset load_trace(const std::string& path);

// Byte size of the fixed header (magic + version + metadata length + metadata + count).
std::uint64_t header_byte_size(const TraceMetadata& metadata);
std::uint64_t record_byte_size(const TraceMetadata& metadata, const ActivationRecord& record);

std::string metadata_json(const TraceMetadata& metadata);
std::string record_header_json(const ActivationRecord& record);

// Random train/test partition. |test| = round(test_fraction * n) clamped to [1, n-1].
// Records keep their original relative order inside each part.
std::pair<TraceDataset, TraceDataset> split_dataset(const TraceDataset& dataset, double test_fraction,
                                                    std::uint64_t seed);

// Every declared level gets an entry, possibly empty.
std::map<int, std::vector<ActivationRecord>> group_by_difficulty(const TraceDataset& dataset);

// Returns a dataset with only the records whose ids are listed (in the listed order).
TraceDataset select_records(const TraceDataset& dataset, const std::vector<std::string>& question_ids);

}  // namespace rplan
