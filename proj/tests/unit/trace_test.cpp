#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "rplan/trace.hpp"
#include "support.hpp"

using namespace rplan;
using rplan::testing::random_dataset;
using rplan::testing::small_metadata;
using rplan::testing::TempDir;

namespace {

std::string encode(const TraceDataset& ds) {
    std::ostringstream out(std::ios::binary);
    write_trace(ds, out);
    return out.str();
}

TraceDataset decode(const std::string& bytes) {
    std::istringstream in(bytes, std::ios::binary);
    return read_trace(in);
}

TraceErrc decode_error(const std::string& bytes) {
    try {
        decode(bytes);
    } catch (const TraceError& e) {
        return e.code();
    }
    ADD_FAILURE() << "decode unexpectedly succeeded";
    return TraceErrc::io_failure;
}

// Walks the byte layout field by field without touching the library reader.
struct Walker {
    const std::string& b;
    std::size_t pos = 0;

    std::uint64_t uint(int bytes) {
        if (pos + static_cast<std::size_t>(bytes) > b.size()) throw std::runtime_error("walker ran off the end");
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[pos + static_cast<std::size_t>(i)])) << (8 * i);
        }
        pos += static_cast<std::size_t>(bytes);
        return v;
    }
    std::string text(std::size_t n) {
        if (pos + n > b.size()) throw std::runtime_error("walker ran off the end");
        std::string s = b.substr(pos, n);
        pos += n;
        return s;
    }
    float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(uint(4))); }
};

// Byte offset of record k's header length field.
std::size_t record_offset(const std::string& bytes, std::size_t k) {
    Walker w{bytes};
    w.text(4);
    w.uint(4);
    const auto meta_len = w.uint(4);
    const auto meta = nlohmann::json::parse(w.text(meta_len));
    w.uint(8);
    const auto floats = static_cast<std::size_t>(meta["n_layers"].get<int>() * meta["d_model"].get<int>());
    for (std::size_t i = 0; i < k; ++i) {
        const auto hl = w.uint(4);
        w.pos += hl + 4 * floats;
    }
    return w.pos;
}

}  // namespace

TEST(TraceFormat, RoundTripIsExact) {
    const auto ds = random_dataset(40, 3, 5, 11);
    const auto bytes = encode(ds);
    const auto back = decode(bytes);
    EXPECT_EQ(back, ds);
    EXPECT_EQ(encode(back), bytes);
}

TEST(TraceFormat, ByteSizesAddUp) {
    const auto ds = random_dataset(7, 2, 4, 3);
    std::uint64_t expected = header_byte_size(ds.metadata);
    for (const auto& r : ds.records) expected += record_byte_size(ds.metadata, r);
    std::ostringstream out(std::ios::binary);
    EXPECT_EQ(write_trace(ds, out), expected);
    EXPECT_EQ(out.str().size(), expected);
}

TEST(TraceFormat, IndependentWalkerAgrees) {
    const auto ds = random_dataset(25, 4, 6, 5);
    const auto bytes = encode(ds);
    Walker w{bytes};
    ASSERT_EQ(w.text(4), "RPLT");
    EXPECT_EQ(w.uint(4), 1u);
    const auto meta = nlohmann::json::parse(w.text(w.uint(4)));
    EXPECT_EQ(meta["n_layers"], 4);
    EXPECT_EQ(meta["d_model"], 6);
    EXPECT_EQ(meta["model_name"], "unit");
    EXPECT_EQ(meta["capture_position"], "pre_generation_think_token");
    EXPECT_EQ(meta["capture_point"], "post_block_residual");
    ASSERT_EQ(w.uint(8), ds.records.size());
    for (const auto& rec : ds.records) {
        const auto header = nlohmann::json::parse(w.text(w.uint(4)));
        EXPECT_EQ(header["question_id"], rec.question_id);
        EXPECT_EQ(header["difficulty"], rec.difficulty);
        EXPECT_EQ(header["reasoning_token_counts"].get<std::vector<std::int64_t>>(), rec.reasoning_token_counts);
        EXPECT_EQ(header["answer_token_counts"].get<std::vector<std::int64_t>>(), rec.answer_token_counts);
        for (float x : rec.activations.data()) {
            EXPECT_EQ(std::bit_cast<std::uint32_t>(w.f32()), std::bit_cast<std::uint32_t>(x));
        }
    }
    EXPECT_EQ(w.pos, bytes.size());
}

TEST(TraceFormat, EmptyDatasetRoundTrips) {
    TraceDataset ds{small_metadata(2, 3), {}};
    EXPECT_EQ(decode(encode(ds)), ds);
}

TEST(TraceFormat, PreservesNegativeZeroAndExtremes) {
    auto ds = random_dataset(1, 1, 4, 1);
    auto data = ds.records[0].activations.data();
    data[0] = -0.0f;
    data[1] = std::numeric_limits<float>::max();
    data[2] = std::numeric_limits<float>::denorm_min();
    data[3] = -std::numeric_limits<float>::min();
    const auto back = decode(encode(ds));
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(std::bit_cast<std::uint32_t>(back.records[0].activations.data()[i]),
                  std::bit_cast<std::uint32_t>(data[i]));
    }
}

TEST(TraceCorruption, BadMagic) {
    auto bytes = encode(random_dataset(3, 2, 2, 1));
    bytes[0] = 'X';
    EXPECT_EQ(decode_error(bytes), TraceErrc::bad_magic);
    EXPECT_EQ(decode_error(""), TraceErrc::bad_magic);
}

TEST(TraceCorruption, UnsupportedVersion) {
    auto bytes = encode(random_dataset(3, 2, 2, 1));
    bytes[4] = 2;
    EXPECT_EQ(decode_error(bytes), TraceErrc::unsupported_version);
}

TEST(TraceCorruption, EveryTruncationIsDetected) {
    const auto bytes = encode(random_dataset(3, 2, 3, 9));
    for (std::size_t cut = 4; cut < bytes.size(); ++cut) {
        const auto code = decode_error(bytes.substr(0, cut));
        EXPECT_EQ(code, TraceErrc::truncated) << "cut at " << cut << " gave " << to_string(code);
    }
}

TEST(TraceCorruption, NonFiniteValueInFile) {
    const auto ds = random_dataset(4, 2, 3, 2);
    auto bytes = encode(ds);
    const std::size_t off = record_offset(bytes, 2);
    const auto header_len = static_cast<std::size_t>(static_cast<unsigned char>(bytes[off])) |
                            static_cast<std::size_t>(static_cast<unsigned char>(bytes[off + 1])) << 8;
    const float nan = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(bytes.data() + off + 4 + header_len + 4, &nan, 4);
    try {
        decode(bytes);
        FAIL();
    } catch (const TraceError& e) {
        EXPECT_EQ(e.code(), TraceErrc::non_finite);
        EXPECT_EQ(e.record_index(), 2u);
    }
}

TEST(TraceCorruption, WriterRefusesNonFinite) {
    auto ds = random_dataset(2, 2, 2, 2);
    ds.records[1].activations(0, 1) = std::numeric_limits<float>::infinity();
    std::ostringstream out;
    try {
        write_trace(ds, out);
        FAIL();
    } catch (const TraceError& e) {
        EXPECT_EQ(e.code(), TraceErrc::non_finite);
    }
    EXPECT_TRUE(out.str().empty());
}

TEST(TraceCorruption, DuplicateIdInFile) {
    auto ds = random_dataset(3, 2, 2, 4);
    ds.records[2].question_id = "qX";
    ds.records[1].question_id = "qY";
    auto bytes = encode(ds);
    const auto pos = bytes.find("\"qY\"");
    ASSERT_NE(pos, std::string::npos);
    bytes[pos + 2] = 'X';
    EXPECT_EQ(decode_error(bytes), TraceErrc::duplicate_id);
}

TEST(TraceCorruption, ShapeMismatchInFile) {
    auto ds = random_dataset(3, 2, 2, 4);
    ds.records[1].reasoning_token_counts = {11, 22};
    ds.records[1].answer_token_counts = {33, 44};
    auto bytes = encode(ds);
    const auto pos = bytes.find("[33,44]");
    ASSERT_NE(pos, std::string::npos);
    // Same byte length, one fewer element: [33,44] -> [3344 ].
    bytes.replace(pos, 7, "[3344 ]");
    EXPECT_EQ(decode_error(bytes), TraceErrc::shape_mismatch);
}

TEST(TraceCorruption, TrailingBytes) {
    auto bytes = encode(random_dataset(2, 2, 2, 4));
    bytes.push_back('\0');
    EXPECT_EQ(decode_error(bytes), TraceErrc::trailing_data);
}

TEST(TraceCorruption, MalformedRecordHeader) {
    auto ds = random_dataset(2, 2, 2, 4);
    auto bytes = encode(ds);
    const auto pos = bytes.find("\"difficulty\"");
    ASSERT_NE(pos, std::string::npos);
    bytes[pos + 1] = 'D';
    EXPECT_EQ(decode_error(bytes), TraceErrc::malformed_header);
}

TEST(TraceCorruption, UnknownMetadataField) {
    auto bytes = encode(random_dataset(1, 1, 1, 4));
    const auto pos = bytes.find("\"model_name\"");
    ASSERT_NE(pos, std::string::npos);
    bytes[pos + 1] = 'M';
    EXPECT_EQ(decode_error(bytes), TraceErrc::invalid_metadata);
}

TEST(TraceValidate, RejectsBadRecords) {
    auto expect_code = [](TraceDataset ds, TraceErrc code) {
        try {
            validate(ds);
            ADD_FAILURE() << "validate accepted a bad dataset";
        } catch (const TraceError& e) {
            EXPECT_EQ(e.code(), code) << e.what();
        }
    };
    const auto good = random_dataset(5, 2, 3, 8);
    EXPECT_NO_THROW(validate(good));

    auto ds = good;
    ds.records[0].activations = MatrixF(3, 3);
    expect_code(ds, TraceErrc::shape_mismatch);

    ds = good;
    ds.records[3].reasoning_token_counts.clear();
    ds.records[3].answer_token_counts.clear();
    expect_code(ds, TraceErrc::shape_mismatch);

    ds = good;
    ds.records[1].answer_token_counts[0] = -1;
    expect_code(ds, TraceErrc::shape_mismatch);

    ds = good;
    ds.records[1].difficulty = 9;
    expect_code(ds, TraceErrc::shape_mismatch);

    ds = good;
    ds.records[4].question_id = ds.records[0].question_id;
    expect_code(ds, TraceErrc::duplicate_id);

    ds = good;
    ds.metadata.difficulty_levels = {3, 1};
    expect_code(ds, TraceErrc::invalid_metadata);

    ds = good;
    ds.metadata.format_version = 7;
    expect_code(ds, TraceErrc::unsupported_version);
}

TEST(TraceFiles, SaveLoadAndMissingFile) {
    TempDir dir;
    const auto ds = random_dataset(6, 2, 2, 6);
    save_trace(ds, dir.file("t.rpt"));
    EXPECT_EQ(load_trace(dir.file("t.rpt")), ds);
    try {
        load_trace(dir.file("missing.rpt"));
        FAIL();
    } catch (const TraceError& e) {
        EXPECT_EQ(e.code(), TraceErrc::io_failure);
    }
}

TEST(Split, SizesAndPartition) {
    const auto ds = random_dataset(50, 1, 2, 1);
    const auto [train, test] = split_dataset(ds, 0.1, 99);
    EXPECT_EQ(test.records.size(), 5u);
    EXPECT_EQ(train.records.size(), 45u);
    std::set<std::string> ids;
    for (const auto& r : train.records) ids.insert(r.question_id);
    for (const auto& r : test.records) EXPECT_TRUE(ids.insert(r.question_id).second);
    EXPECT_EQ(ids.size(), 50u);
}

TEST(Split, KeepsOriginalOrderAndIsDeterministic) {
    const auto ds = random_dataset(30, 1, 2, 1);
    const auto a = split_dataset(ds, 0.3, 5);
    const auto b = split_dataset(ds, 0.3, 5);
    EXPECT_EQ(a.first, b.first);
    EXPECT_EQ(a.second, b.second);
    auto position = [&](const std::string& id) {
        for (std::size_t i = 0; i < ds.records.size(); ++i) {
            if (ds.records[i].question_id == id) return i;
        }
        return ds.records.size();
    };
    for (const auto* part : {&a.first, &a.second}) {
        for (std::size_t i = 1; i < part->records.size(); ++i) {
            EXPECT_LT(position(part->records[i - 1].question_id), position(part->records[i].question_id));
        }
    }
}

TEST(Split, ClampsToAtLeastOneOnEachSide) {
    const auto ds = random_dataset(3, 1, 1, 1);
    EXPECT_EQ(split_dataset(ds, 0.01, 1).second.records.size(), 1u);
    EXPECT_EQ(split_dataset(ds, 0.99, 1).first.records.size(), 1u);
    EXPECT_THROW(split_dataset(random_dataset(1, 1, 1, 1), 0.5, 1), PreconditionError);
    EXPECT_THROW(split_dataset(ds, 0.0, 1), PreconditionError);
    EXPECT_THROW(split_dataset(ds, 1.0, 1), PreconditionError);
}

TEST(Split, EachRecordLandsInTestAtTheStatedRate) {
    const auto ds = random_dataset(20, 1, 1, 1);
    std::map<std::string, int> hits;
    const int trials = 4000;
    for (int s = 0; s < trials; ++s) {
        for (const auto& r : split_dataset(ds, 0.25, static_cast<std::uint64_t>(s)).second.records) {
            ++hits[r.question_id];
        }
    }
    // p = 5/20; binomial sd over 4000 trials is about 27, allow 5 sd.
    for (const auto& r : ds.records) EXPECT_NEAR(hits[r.question_id], 1000, 140) << r.question_id;
}

TEST(Grouping, DeclaredLevelsAlwaysPresent) {
    auto ds = random_dataset(4, 1, 1, 1);  // levels 1..4 only
    const auto g = group_by_difficulty(ds);
    ASSERT_EQ(g.size(), 5u);
    EXPECT_TRUE(g.at(5).empty());
    EXPECT_EQ(g.at(1).size(), 1u);
}

TEST(Grouping, SelectRecordsFollowsListedOrder) {
    const auto ds = random_dataset(5, 1, 1, 1);
    const auto sel = select_records(ds, {"q3", "q0"});
    ASSERT_EQ(sel.records.size(), 2u);
    EXPECT_EQ(sel.records[0].question_id, "q3");
    EXPECT_EQ(sel.records[1].question_id, "q0");
    EXPECT_THROW(select_records(ds, {"nope"}), PreconditionError);
}
