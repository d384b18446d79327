#pragma once

#include <array>
#include <string>

namespace neurocad {

inline constexpr int kScoreLevels = 11;
inline constexpr int kMaxScore = kScoreLevels - 1;

/// An expert answer on the 0..10 scale for one capability question.
struct Score {
    int value = 0;
    std::string question_id;

    Score(int value, std::string question_id = {});
};

/// Activation per output neuron 0..10.
using ScoreCurve = std::array<double, kScoreLevels>;

enum class CurveFormula {
    /// exp(-(width * (A - I))^2): peak 1 at neuron A.
    centered,
    /// exp(-(0.5 * (A / 11 - I + 1))^2) taken literally; peaks near neuron
    /// A/11 + 1 whatever A is. Kept for auditing only.
    literal_printed,
};

ScoreCurve encode_score(const Score& score, double width = 0.5, CurveFormula formula = CurveFormula::centered);

struct DecodedScore {
    int score = 0;
    double peak_height = 0.0;
};

/// Argmax with ties resolved toward the lower index.
DecodedScore decode_score(const ScoreCurve& curve);

/// |predicted - expected| <= steps. Two steps (2/11, about 18% of the scale)
/// is the default permissible deviation; one step is the strict variant.
bool within_tolerance(int predicted, int expected, int steps = 2);

bool valid_score(int value);

}  // namespace neurocad
