#include <doctest.h>

#include <cmath>

#include "neurocad/error.hpp"
#include "neurocad/labels.hpp"

using namespace neurocad;

TEST_CASE("encoding places a unit peak at the score") {
    const ScoreCurve c = encode_score(Score(5));
    CHECK(c[5] == 1.0);
    CHECK(std::abs(c[4] - std::exp(-0.25)) < 1e-12);
    CHECK(std::abs(c[6] - std::exp(-0.25)) < 1e-12);
    CHECK(std::abs(c[3] - std::exp(-1.0)) < 1e-12);
    CHECK(std::abs(c[0] - std::exp(-6.25)) < 1e-12);
}

TEST_CASE("end scores mirror each other") {
    const ScoreCurve lo = encode_score(Score(0)), hi = encode_score(Score(10));
    for (int i = 0; i <= 10; ++i) CHECK(lo[i] == hi[10 - i]);
    CHECK(lo[0] == 1.0);
}

TEST_CASE("decode inverts encode") {
    for (int a = 0; a <= 10; ++a) {
        const DecodedScore d = decode_score(encode_score(Score(a)));
        CHECK(d.score == a);
        CHECK(d.peak_height == 1.0);
    }
}

TEST_CASE("decode ties and low peaks") {
    ScoreCurve flat;
    flat.fill(0.5);
    CHECK(decode_score(flat).score == 0);
    CHECK(decode_score(flat).peak_height == 0.5);

    ScoreCurve c{};
    c[3] = 0.62;
    c[7] = 0.61;
    CHECK(decode_score(c).score == 3);
    CHECK(decode_score(c).peak_height == 0.62);
}

TEST_CASE("tolerance") {
    CHECK(within_tolerance(5, 7));
    CHECK_FALSE(within_tolerance(5, 8));
    CHECK(within_tolerance(0, 1, 1));
    CHECK_FALSE(within_tolerance(0, 2, 1));
    CHECK(within_tolerance(4, 4, 0));
    for (int a = 0; a <= 10; ++a)
        for (int b = 0; b <= 10; ++b) CHECK(within_tolerance(a, b) == within_tolerance(b, a));
    CHECK_THROWS_AS(within_tolerance(11, 3), Error);
}

TEST_CASE("shifting the score shifts the curve") {
    for (int a = 0; a < 10; ++a) {
        const ScoreCurve c = encode_score(Score(a)), d = encode_score(Score(a + 1));
        for (int i = 0; i < 10; ++i) CHECK(std::abs(c[i] - d[i + 1]) < 1e-15);
    }
}

TEST_CASE("scores outside 0..10 are rejected") {
    CHECK_THROWS_AS(Score(-1), Error);
    CHECK_THROWS_AS(Score(11), Error);
    CHECK(valid_score(0));
    CHECK_FALSE(valid_score(11));
}

TEST_CASE("the literal formula does not peak at the score") {
    const ScoreCurve c = encode_score(Score(10), 0.5, CurveFormula::literal_printed);
    CHECK(decode_score(c).score == 2);  // peak at 10/11 + 1
    CHECK(decode_score(encode_score(Score(0), 0.5, CurveFormula::literal_printed)).score == 1);
}
