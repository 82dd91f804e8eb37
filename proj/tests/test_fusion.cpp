#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "sitfuse/fusion.hpp"
#include "sitfuse/rng.hpp"

using namespace sitfuse;
using fusion::CertaintyMask;
using fusion::StreamMask;

namespace {

GridGeometry unit_grid(int width, int height) {
    GridGeometry g;
    g.width = width;
    g.height = height;
    return g;
}

StreamMask make_stream(int width, int height, const std::vector<float>& scores, double weight,
                       double timestamp, const std::string& sensor) {
    StreamMask s;
    s.geometry = unit_grid(width, height);
    s.mask.width = width;
    s.mask.height = height;
    s.mask.values.assign(static_cast<size_t>(width) * height, 0);
    s.mask.valid.assign(static_cast<size_t>(width) * height, 1);
    for (size_t i = 0; i < scores.size(); ++i) s.mask.values[i] = scores[i] >= 0.5f ? 1 : 0;
    s.scores = scores;
    s.weight = weight;
    s.timestamp = timestamp;
    s.sensor_id = sensor;
    return s;
}

StreamMask random_stream(int width, int height, uint64_t seed, double weight) {
    SplitMix64 rng(seed);
    std::vector<float> scores(static_cast<size_t>(width) * height);
    for (auto& v : scores) v = static_cast<float>(rng.next_double());
    return make_stream(width, height, scores, weight, 0.0, "s" + std::to_string(seed));
}

fusion::RetrievalGrid make_retrieval(int width, int height, uint64_t seed) {
    fusion::RetrievalGrid ret;
    ret.geometry = unit_grid(width, height);
    const size_t n = static_cast<size_t>(width) * height;
    ret.values.resize(n);
    ret.cloud_fraction.resize(n);
    ret.valid.assign(n, 1);
    SplitMix64 rng(seed);
    for (size_t i = 0; i < n; ++i) {
        ret.values[i] = static_cast<float>(rng.next_normal(10.0, 3.0));
        ret.cloud_fraction[i] = static_cast<float>(rng.next_double());
        ret.valid[i] = rng.next_bernoulli(0.9) ? 1 : 0;
    }
    return ret;
}

}  // namespace

TEST_CASE("fuse: a single stream passes its scores through") {
    const auto s = make_stream(4, 3, std::vector<float>(12, 0.0f), 1.0, 0.0, "a");
    StreamMask scored = s;
    for (size_t i = 0; i < 12; ++i) scored.scores[i] = i % 2 ? 1.0f : 0.0f;
    for (size_t i = 0; i < 12; ++i) scored.mask.values[i] = i % 2 ? 1 : 0;

    const auto cert = fusion::fuse({scored}, scored.geometry, 0.0, 3600.0);
    for (size_t i = 0; i < 12; ++i) {
        CHECK(cert.valid[i] == 1);
        CHECK(cert.certainty[i] == (i % 2 ? 1.0f : 0.0f));
        CHECK(cert.contributors[i] == 1);
    }
    CHECK(cert.covered_pixels() == 12);
}

TEST_CASE("fuse: scores fall back to the binary mask when absent") {
    StreamMask s = make_stream(3, 2, std::vector<float>(6, 0.0f), 1.0, 0.0, "a");
    s.scores.clear();
    s.mask.values = {1, 0, 1, 0, 1, 0};
    const auto cert = fusion::fuse({s}, s.geometry, 0.0, 3600.0);
    for (size_t i = 0; i < 6; ++i) CHECK(cert.certainty[i] == static_cast<float>(s.mask.values[i]));
}

TEST_CASE("fuse: two equal-weight streams disagreeing at a pixel give 0.5") {
    const auto a = make_stream(2, 2, {1.0f, 1.0f, 0.0f, 0.0f}, 1.0, 0.0, "a");
    const auto b = make_stream(2, 2, {0.0f, 1.0f, 0.0f, 1.0f}, 1.0, 0.0, "b");
    const auto cert = fusion::fuse({a, b}, a.geometry, 0.0, 3600.0);
    CHECK(cert.certainty[0] == 0.5f);
    CHECK(cert.certainty[1] == 1.0f);
    CHECK(cert.certainty[2] == 0.0f);
    CHECK(cert.certainty[3] == 0.5f);
}

TEST_CASE("fuse: weights 2,1,1 with scores 1,0,0 give 0.5") {
    const auto a = make_stream(1, 1, {1.0f}, 2.0, 0.0, "a");
    const auto b = make_stream(1, 1, {0.0f}, 1.0, 0.0, "b");
    const auto c = make_stream(1, 1, {0.0f}, 1.0, 0.0, "c");
    const auto cert = fusion::fuse({a, b, c}, a.geometry, 0.0, 3600.0);
    CHECK(cert.certainty[0] == 0.5f);
    CHECK(cert.contributors[0] == 3);
}

TEST_CASE("fuse: convex bound, permutation invariance, duplication idempotence") {
    for (uint64_t seed = 1; seed <= 100; ++seed) {
        SplitMix64 rng(seed * 7919);
        const int n_streams = 2 + static_cast<int>(rng.next_below(3));
        std::vector<StreamMask> streams;
        for (int s = 0; s < n_streams; ++s)
            streams.push_back(random_stream(5, 4, seed * 10 + static_cast<uint64_t>(s),
                                            0.5 + rng.next_double() * 2.0));
        const GridGeometry target = streams[0].geometry;

        const auto cert = fusion::fuse(streams, target, 0.0, 3600.0);

        // Convex combination: certainty within [min q, max q] per pixel.
        for (size_t i = 0; i < cert.certainty.size(); ++i) {
            float lo = 1.0f, hi = 0.0f;
            for (const auto& s : streams) {
                lo = std::min(lo, s.scores[i]);
                hi = std::max(hi, s.scores[i]);
            }
            CHECK(cert.certainty[i] >= lo);
            CHECK(cert.certainty[i] <= hi);
        }

        // Exact permutation invariance (rotate + swap).
        std::vector<StreamMask> rotated(streams.begin() + 1, streams.end());
        rotated.push_back(streams.front());
        std::reverse(rotated.begin(), rotated.end());
        const auto cert_rot = fusion::fuse(rotated, target, 0.0, 3600.0);
        CHECK(cert.certainty == cert_rot.certainty);
        CHECK(cert.valid == cert_rot.valid);

        // Duplicating the whole list leaves every value bit-identical.
        std::vector<StreamMask> doubled = streams;
        doubled.insert(doubled.end(), streams.begin(), streams.end());
        const auto cert_dup = fusion::fuse(doubled, target, 0.0, 3600.0);
        CHECK(cert.certainty == cert_dup.certainty);
    }
}

TEST_CASE("fuse: empty stream list is an error") {
    CHECK_THROWS_AS(fusion::fuse({}, unit_grid(2, 2), 0.0, 3600.0), fusion::FusionError);
}

TEST_CASE("fuse: streams outside the time window are ignored") {
    const auto near = make_stream(2, 1, {1.0f, 1.0f}, 1.0, 100.0, "near");
    const auto far = make_stream(2, 1, {0.0f, 0.0f}, 1.0, 90000.0, "far");
    const auto cert = fusion::fuse({near, far}, near.geometry, 0.0, 3600.0);
    CHECK(cert.certainty[0] == 1.0f);
    CHECK(cert.contributors[0] == 1);

    // Nothing in the window -> all pixels invalid, not an exception.
    const auto none = fusion::fuse({far}, near.geometry, 0.0, 3600.0);
    CHECK(none.covered_pixels() == 0);
}

TEST_CASE("fuse: disjoint geometry yields an all-invalid mask") {
    auto s = random_stream(3, 3, 5, 1.0);
    GridGeometry elsewhere = s.geometry;
    elsewhere.transform.g[0] = 1000.0;
    elsewhere.transform.g[3] = 1000.0;
    const auto cert = fusion::fuse({s}, elsewhere, 0.0, 3600.0);
    CHECK(cert.covered_pixels() == 0);
    for (const uint8_t v : cert.valid) CHECK(v == 0);
}

TEST_CASE("fuse: invalid stream pixels do not contribute") {
    StreamMask a = make_stream(2, 1, {1.0f, 1.0f}, 1.0, 0.0, "a");
    StreamMask b = make_stream(2, 1, {0.0f, 0.0f}, 1.0, 0.0, "b");
    b.mask.valid = {0, 1};
    const auto cert = fusion::fuse({a, b}, a.geometry, 0.0, 3600.0);
    CHECK(cert.certainty[0] == 1.0f);  // only stream a covers pixel 0
    CHECK(cert.contributors[0] == 1);
    CHECK(cert.certainty[1] == 0.5f);
    CHECK(cert.contributors[1] == 2);
}

TEST_CASE("binarize: threshold semantics and monotonicity") {
    auto s = random_stream(6, 5, 11, 1.0);
    auto cert = fusion::fuse({s}, s.geometry, 0.0, 3600.0);
    cert.valid[3] = 0;

    const auto all = fusion::binarize(cert, 0.0);
    for (size_t i = 0; i < all.values.size(); ++i) {
        CHECK(all.values[i] == (cert.valid[i] ? 1 : 0));
        CHECK(all.valid[i] == cert.valid[i]);
    }

    const auto strict = fusion::binarize(cert, 1.0);
    for (size_t i = 0; i < strict.values.size(); ++i)
        CHECK(strict.values[i] == ((cert.valid[i] && cert.certainty[i] >= 1.0f) ? 1 : 0));

    const auto loose = fusion::binarize(cert, 0.3);
    const auto tight = fusion::binarize(cert, 0.7);
    for (size_t i = 0; i < loose.values.size(); ++i)
        if (tight.values[i] == 1) CHECK(loose.values[i] == 1);
}

TEST_CASE("restore_retrievals: the three cloud-fraction cases") {
    fusion::RetrievalGrid ret;
    ret.geometry = unit_grid(3, 1);
    ret.values = {7.25f, -2.5f, 0.125f};
    ret.cloud_fraction = {0.3f, 0.3f, 0.1f};
    ret.valid = {1, 1, 1};

    BinaryMask smoke;
    smoke.width = 3;
    smoke.height = 1;
    smoke.values = {1, 0, 0};
    smoke.valid = {1, 1, 1};

    const auto out = fusion::restore_retrievals(ret, smoke, 0.2);
    CHECK(out.valid[0] == 1);  // cloudy but smoke-covered: restored
    CHECK(out.values[0] == 7.25f);
    CHECK(out.valid[1] == 0);  // cloudy, no smoke: filtered
    CHECK(out.valid[2] == 1);  // clear: untouched
    CHECK(out.values[2] == 0.125f);
}

TEST_CASE("restore_retrievals: brute-force set identity on random grids") {
    for (uint64_t seed = 1; seed <= 50; ++seed) {
        const auto ret = make_retrieval(8, 6, seed);
        BinaryMask smoke;
        smoke.width = 8;
        smoke.height = 6;
        smoke.values.assign(48, 0);
        smoke.valid.assign(48, 1);
        SplitMix64 rng(seed ^ 0xBEEF);
        for (auto& v : smoke.values) v = rng.next_bernoulli(0.4) ? 1 : 0;

        const auto out = fusion::restore_retrievals(ret, smoke, 0.2);
        for (size_t i = 0; i < 48; ++i) {
            const bool keep = ret.valid[i] != 0 &&
                              (ret.cloud_fraction[i] <= 0.2f || smoke.values[i] == 1);
            CHECK(out.valid[i] == (keep ? 1 : 0));
            if (keep) CHECK(out.values[i] == ret.values[i]);  // bit-exact pass-through
        }
    }
}

TEST_CASE("restore_retrievals: never resurrects pixels invalid on input") {
    auto ret = make_retrieval(4, 4, 3);
    ret.valid.assign(16, 0);
    BinaryMask smoke;
    smoke.width = 4;
    smoke.height = 4;
    smoke.values.assign(16, 1);
    smoke.valid.assign(16, 1);
    const auto out = fusion::restore_retrievals(ret, smoke, 0.2);
    for (const uint8_t v : out.valid) CHECK(v == 0);
}

TEST_CASE("restore_retrievals: grid mismatch throws") {
    const auto ret = make_retrieval(4, 4, 9);
    BinaryMask smoke;
    smoke.width = 5;
    smoke.height = 4;
    smoke.values.assign(20, 0);
    smoke.valid.assign(20, 1);
    CHECK_THROWS_AS(fusion::restore_retrievals(ret, smoke, 0.2), fusion::FusionError);
}
