#include "neurocad/labels.hpp"

#include <cmath>
#include <cstdlib>
#include <utility>

#include "neurocad/error.hpp"

namespace neurocad {

bool valid_score(int value) { return value >= 0 && value <= kMaxScore; }

Score::Score(int v, std::string q) : value(v), question_id(std::move(q)) {
    if (!valid_score(v)) throw Error("score " + std::to_string(v) + " outside [0, 10]");
}

ScoreCurve encode_score(const Score& score, double width, CurveFormula formula) {
    ScoreCurve curve{};
    const double a = score.value;
    for (int i = 0; i < kScoreLevels; ++i) {
        const double arg = formula == CurveFormula::centered ? width * (a - i) : 0.5 * (a / 11.0 - i + 1.0);
        curve[static_cast<std::size_t>(i)] = std::exp(-(arg * arg));
    }
    return curve;
}

DecodedScore decode_score(const ScoreCurve& curve) {
    DecodedScore out{0, curve[0]};
    for (int i = 1; i < kScoreLevels; ++i) {
        if (curve[static_cast<std::size_t>(i)] > out.peak_height) {
            out = {i, curve[static_cast<std::size_t>(i)]};
        }
    }
    return out;
}

bool within_tolerance(int predicted, int expected, int steps) {
    if (!valid_score(predicted) || !valid_score(expected)) throw Error("within_tolerance: score outside [0, 10]");
    return std::abs(predicted - expected) <= steps;
}

}  // namespace neurocad
