#include "rplan/trace.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

namespace rplan {

using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "RPT I/O assumes a little-endian host");

namespace {

constexpr std::array<char, 4> kMagic = {'R', 'P', 'L', 'T'};
constexpr std::uint32_t kFormatVersion = 1;

const char* capture_position_name(CapturePosition p) {
    switch (p) {
        case CapturePosition::pre_generation_think_token:
            return "pre_generation_think_token";
    }
    return "?";
}

const char* capture_point_name(CapturePoint p) {
    switch (p) {
        case CapturePoint::post_block_residual:
            return "post_block_residual";
        case CapturePoint::pre_block_residual:
            return "pre_block_residual";
    }
    return "?";
}

template <typename T>
void put(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
bool get(std::istream& in, T& value) {
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    return static_cast<std::size_t>(in.gcount()) == sizeof(T);
}

json metadata_to_json(const TraceMetadata& m) {
    return json{
        {"format_version", m.format_version},
        {"model_name", m.model_name},
        {"n_layers", m.n_layers},
        {"d_model", m.d_model},
        {"think_token_id", m.think_token_id},
        {"end_think_token_id", m.end_think_token_id},
        {"eos_token_id", m.eos_token_id},
        {"difficulty_levels", m.difficulty_levels},
        {"capture_position", capture_position_name(m.capture_position)},
        {"capture_point", capture_point_name(m.capture_point)},
    };
}

TraceMetadata metadata_from_json(const json& j) {
    static const std::set<std::string> kFields = {
        "format_version", "model_name",        "n_layers",         "d_model",       "think_token_id",
        "end_think_token_id", "eos_token_id", "difficulty_levels", "capture_position", "capture_point"};
    if (!j.is_object()) {
        throw TraceError(TraceErrc::invalid_metadata, "metadata is not a JSON object");
    }
    for (const auto& [key, _] : j.items()) {
        if (!kFields.contains(key)) {
            throw TraceError(TraceErrc::invalid_metadata, "unknown metadata field '" + key + "'");
        }
    }
    for (const auto& key : kFields) {
        if (!j.contains(key)) {
            throw TraceError(TraceErrc::invalid_metadata, "missing metadata field '" + key + "'");
        }
    }
    TraceMetadata m;
    try {
        m.format_version = j.at("format_version").get<std::uint32_t>();
        m.model_name = j.at("model_name").get<std::string>();
        m.n_layers = j.at("n_layers").get<std::int64_t>();
        m.d_model = j.at("d_model").get<std::int64_t>();
        m.think_token_id = j.at("think_token_id").get<TokenId>();
        m.end_think_token_id = j.at("end_think_token_id").get<TokenId>();
        m.eos_token_id = j.at("eos_token_id").get<TokenId>();
        m.difficulty_levels = j.at("difficulty_levels").get<std::vector<int>>();
        const auto pos = j.at("capture_position").get<std::string>();
        if (pos != "pre_generation_think_token") {
            throw TraceError(TraceErrc::invalid_metadata, "unknown capture_position '" + pos + "'");
        }
        const auto point = j.at("capture_point").get<std::string>();
        if (point == "post_block_residual") {
            m.capture_point = CapturePoint::post_block_residual;
        } else if (point == "pre_block_residual") {
            m.capture_point = CapturePoint::pre_block_residual;
        } else {
            throw TraceError(TraceErrc::invalid_metadata, "unknown capture_point '" + point + "'");
        }
    } catch (const json::exception& e) {
        throw TraceError(TraceErrc::invalid_metadata, std::string("metadata field has wrong type: ") + e.what());
    }
    return m;
}

json record_header_to_json(const ActivationRecord& r) {
    return json{
        {"question_id", r.question_id},
        {"difficulty", r.difficulty},
        {"reasoning_token_counts", r.reasoning_token_counts},
        {"answer_token_counts", r.answer_token_counts},
    };
}

void validate_record(const TraceMetadata& m, const ActivationRecord& r, std::size_t index) {
    if (r.activations.rows() != static_cast<std::size_t>(m.n_layers) ||
        r.activations.cols() != static_cast<std::size_t>(m.d_model)) {
        throw TraceError(TraceErrc::shape_mismatch,
                         "record " + std::to_string(index) + " activations are " +
                             std::to_string(r.activations.rows()) + "x" + std::to_string(r.activations.cols()) +
                             ", expected " + std::to_string(m.n_layers) + "x" + std::to_string(m.d_model),
                         index);
    }
    for (float x : r.activations.data()) {
        if (!std::isfinite(x)) {
            throw TraceError(TraceErrc::non_finite, "record " + std::to_string(index) + " has a non-finite activation",
                             index);
        }
    }
    if (r.reasoning_token_counts.empty()) {
        throw TraceError(TraceErrc::shape_mismatch, "record " + std::to_string(index) + " has no rollouts", index);
    }
    if (r.reasoning_token_counts.size() != r.answer_token_counts.size()) {
        throw TraceError(TraceErrc::shape_mismatch,
                         "record " + std::to_string(index) + " has " + std::to_string(r.reasoning_token_counts.size()) +
                             " reasoning counts but " + std::to_string(r.answer_token_counts.size()) + " answer counts",
                         index);
    }
    auto negative = [](std::int64_t c) { return c < 0; };
    if (std::ranges::any_of(r.reasoning_token_counts, negative) || std::ranges::any_of(r.answer_token_counts, negative)) {
        throw TraceError(TraceErrc::shape_mismatch, "record " + std::to_string(index) + " has a negative token count",
                         index);
    }
    if (!std::ranges::binary_search(m.difficulty_levels, r.difficulty)) {
        throw TraceError(TraceErrc::shape_mismatch,
                         "record " + std::to_string(index) + " difficulty " + std::to_string(r.difficulty) +
                             " is not a declared level",
                         index);
    }
}

}  // namespace

const char* to_string(TraceErrc code) {
    switch (code) {
        case TraceErrc::bad_magic: return "bad magic";
        case TraceErrc::unsupported_version: return "unsupported version";
        case TraceErrc::truncated: return "truncated";
        case TraceErrc::non_finite: return "non-finite value";
        case TraceErrc::shape_mismatch: return "shape mismatch";
        case TraceErrc::duplicate_id: return "duplicate question id";
        case TraceErrc::invalid_metadata: return "invalid metadata";
        case TraceErrc::malformed_header: return "malformed record header";
        case TraceErrc::trailing_data: return "trailing data";
        case TraceErrc::io_failure: return "i/o failure";
    }
    return "unknown";
}

TraceError::TraceError(TraceErrc code, const std::string& what, std::optional<std::size_t> record_index)
    : Error(std::string(to_string(code)) + ": " + what), code_(code), record_index_(record_index) {}

void validate(const TraceMetadata& m) {
    if (m.format_version != kFormatVersion) {
        throw TraceError(TraceErrc::unsupported_version, "format_version " + std::to_string(m.format_version));
    }
    if (m.n_layers < 1 || m.d_model < 1) {
        throw TraceError(TraceErrc::invalid_metadata, "n_layers and d_model must be >= 1");
    }
    for (std::size_t i = 1; i < m.difficulty_levels.size(); ++i) {
        if (m.difficulty_levels[i] <= m.difficulty_levels[i - 1]) {
            throw TraceError(TraceErrc::invalid_metadata, "difficulty_levels must be sorted and unique");
        }
    }
    if (m.think_token_id == m.end_think_token_id) {
        throw TraceError(TraceErrc::invalid_metadata, "think and end_think token ids coincide");
    }
}

void validate(const TraceDataset& dataset) {
    validate(dataset.metadata);
    std::set<std::string> seen;
    for (std::size_t i = 0; i < dataset.records.size(); ++i) {
        const auto& r = dataset.records[i];
        validate_record(dataset.metadata, r, i);
        if (!seen.insert(r.question_id).second) {
            throw TraceError(TraceErrc::duplicate_id, "question_id '" + r.question_id + "' repeats at record " +
                                                          std::to_string(i),
                             i);
        }
    }
}

std::string metadata_json(const TraceMetadata& metadata) { return metadata_to_json(metadata).dump(); }

std::string record_header_json(const ActivationRecord& record) { return record_header_to_json(record).dump(); }

std::uint64_t header_byte_size(const TraceMetadata& metadata) {
    return kMagic.size() + sizeof(std::uint32_t) * 2 + metadata_json(metadata).size() + sizeof(std::uint64_t);
}

std::uint64_t record_byte_size(const TraceMetadata& metadata, const ActivationRecord& record) {
    return sizeof(std::uint32_t) + record_header_json(record).size() +
           sizeof(float) * static_cast<std::uint64_t>(metadata.n_layers * metadata.d_model);
}

std::uint64_t write_trace(const TraceDataset& dataset, std::ostream& sink) {
    validate(dataset);

    const std::string meta = metadata_json(dataset.metadata);
    std::uint64_t bytes = 0;
    sink.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(sink, kFormatVersion);
    put<std::uint32_t>(sink, static_cast<std::uint32_t>(meta.size()));
    sink.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    put<std::uint64_t>(sink, dataset.records.size());
    bytes += header_byte_size(dataset.metadata);

    for (const auto& r : dataset.records) {
        const std::string header = record_header_json(r);
        put<std::uint32_t>(sink, static_cast<std::uint32_t>(header.size()));
        sink.write(header.data(), static_cast<std::streamsize>(header.size()));
        const auto values = r.activations.data();
        sink.write(reinterpret_cast<const char*>(values.data()),
                   static_cast<std::streamsize>(values.size() * sizeof(float)));
        bytes += sizeof(std::uint32_t) + header.size() + values.size() * sizeof(float);
        if (!sink) break;
    }
    if (!sink) {
        throw TraceError(TraceErrc::io_failure, "write to sink failed");
    }
    return bytes;
}

TraceDataset read_trace(std::istream& source) {
    std::array<char, 4> magic{};
    source.read(magic.data(), magic.size());
    if (source.gcount() != static_cast<std::streamsize>(magic.size()) || magic != kMagic) {
        throw TraceError(TraceErrc::bad_magic, "stream does not start with RPLT");
    }
    std::uint32_t version = 0;
    if (!get(source, version)) {
        throw TraceError(TraceErrc::truncated, "stream ends inside the file header");
    }
    if (version != kFormatVersion) {
        throw TraceError(TraceErrc::unsupported_version, "format_version " + std::to_string(version));
    }
    std::uint32_t meta_len = 0;
    if (!get(source, meta_len)) {
        throw TraceError(TraceErrc::truncated, "stream ends inside the file header");
    }
    std::string meta(meta_len, '\0');
    source.read(meta.data(), meta_len);
    if (static_cast<std::uint32_t>(source.gcount()) != meta_len) {
        throw TraceError(TraceErrc::truncated, "stream ends inside the metadata");
    }
    json meta_json = json::parse(meta, nullptr, false);
    if (meta_json.is_discarded()) {
        throw TraceError(TraceErrc::invalid_metadata, "metadata is not valid JSON");
    }

    TraceDataset ds;
    ds.metadata = metadata_from_json(meta_json);
    if (ds.metadata.format_version != version) {
        throw TraceError(TraceErrc::unsupported_version, "metadata format_version disagrees with the file header");
    }
    validate(ds.metadata);

    std::uint64_t count = 0;
    if (!get(source, count)) {
        throw TraceError(TraceErrc::truncated, "stream ends before the record count");
    }

    const auto n_layers = static_cast<std::size_t>(ds.metadata.n_layers);
    const auto d_model = static_cast<std::size_t>(ds.metadata.d_model);
    std::set<std::string> seen;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        const auto where = "record " + std::to_string(i);
        std::uint32_t header_len = 0;
        if (!get(source, header_len)) {
            throw TraceError(TraceErrc::truncated, where + " header length missing", idx);
        }
        std::string header(header_len, '\0');
        source.read(header.data(), header_len);
        if (static_cast<std::uint32_t>(source.gcount()) != header_len) {
            throw TraceError(TraceErrc::truncated, where + " header cut short", idx);
        }
        json hj = json::parse(header, nullptr, false);
        if (hj.is_discarded() || !hj.is_object() || hj.size() != 4) {
            throw TraceError(TraceErrc::malformed_header, where + " header is not the expected JSON object", idx);
        }
        ActivationRecord rec;
        try {
            rec.question_id = hj.at("question_id").get<std::string>();
            rec.difficulty = hj.at("difficulty").get<int>();
            rec.reasoning_token_counts = hj.at("reasoning_token_counts").get<std::vector<std::int64_t>>();
            rec.answer_token_counts = hj.at("answer_token_counts").get<std::vector<std::int64_t>>();
        } catch (const json::exception& e) {
            throw TraceError(TraceErrc::malformed_header, where + ": " + e.what(), idx);
        }
        std::vector<float> values(n_layers * d_model);
        source.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
        if (static_cast<std::size_t>(source.gcount()) != values.size() * sizeof(float)) {
            throw TraceError(TraceErrc::truncated, where + " activations cut short", idx);
        }
        rec.activations = MatrixF(n_layers, d_model, std::move(values));
        validate_record(ds.metadata, rec, idx);
        if (!seen.insert(rec.question_id).second) {
            throw TraceError(TraceErrc::duplicate_id, "question_id '" + rec.question_id + "' repeats at " + where, idx);
        }
        ds.records.push_back(std::move(rec));
    }
    if (source.peek() != std::char_traits<char>::eof()) {
        throw TraceError(TraceErrc::trailing_data, "bytes remain after the last record");
    }
    return ds;
}

void save_trace(const TraceDataset& dataset, const std::string& path) {
    validate(dataset);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw TraceError(TraceErrc::io_failure, "cannot open '" + path + "' for writing");
    }
    write_trace(dataset, out);
    out.close();
    if (!out) {
        throw TraceError(TraceErrc::io_failure, "cannot finish writing '" + path + "'");
    }
}

TraceDataset load_trace(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw TraceError(TraceErrc::io_failure, "cannot open '" + path + "'");
    }
    return read_trace(in);
}

std::pair<TraceDataset, TraceDataset> split_dataset(const TraceDataset& dataset, double test_fraction,
                                                    std::uint64_t seed) {
    const std::size_t n = dataset.records.size();
    if (n < 2) {
        throw PreconditionError("split_dataset needs at least 2 records, got " + std::to_string(n));
    }
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        throw PreconditionError("test_fraction must lie in (0, 1)");
    }
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    n_test = std::clamp<std::size_t>(n_test, 1, n - 1);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<bool> in_test(n, false);
    for (std::size_t k = 0; k < n_test; ++k) in_test[order[k]] = true;

    std::pair<TraceDataset, TraceDataset> parts{TraceDataset{dataset.metadata, {}}, TraceDataset{dataset.metadata, {}}};
    for (std::size_t i = 0; i < n; ++i) {
        (in_test[i] ? parts.second : parts.first).records.push_back(dataset.records[i]);
    }
    return parts;
}

std::map<int, std::vector<ActivationRecord>> group_by_difficulty(const TraceDataset& dataset) {
    std::map<int, std::vector<ActivationRecord>> groups;
    for (int level : dataset.metadata.difficulty_levels) groups[level];
    for (const auto& r : dataset.records) groups[r.difficulty].push_back(r);
    return groups;
}

TraceDataset select_records(const TraceDataset& dataset, const std::vector<std::string>& question_ids) {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < dataset.records.size(); ++i) index.emplace(dataset.records[i].question_id, i);
    TraceDataset out{dataset.metadata, {}};
    for (const auto& id : question_ids) {
        auto it = index.find(id);
        if (it == index.end()) {
            throw PreconditionError("question_id '" + id + "' not present in trace");
        }
        out.records.push_back(dataset.records[it->second]);
    }
    return out;
}

}  // namespace rplan
