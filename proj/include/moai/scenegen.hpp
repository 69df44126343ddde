#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moai/rng.hpp"
#include "moai/verbalize.hpp"
#include "moai/vision.hpp"

namespace moai {

// Closed word lists for scene content; keeps the toy vocabulary small and
// most answers single-token.
struct Lexicon {
    std::vector<std::string> object_classes;
    std::vector<std::string> predicates;  // "left of", "right of", "above", "below"
    std::vector<std::string> text_strings;
    std::vector<std::string> colors;

    static const Lexicon& standard();
    int class_id(const std::string& name) const;  // 1-based; 0 reserved for unknown
};

struct SceneObject {
    std::string class_name;
    std::string color;
    int row = 0, col = 0;
};

struct SceneText {
    std::string text;
    int row = 0, col = 0;
};

struct SceneRelation {
    std::string subject, predicate, object;
};

struct SyntheticScene {
    uint64_t seed = 0;
    int grid = 4;
    std::vector<SceneObject> objects;
    std::vector<SceneRelation> relations;  // derived from object positions
    std::vector<SceneText> texts;
};

struct NoiseConfig {
    double drop_prob = 0.0;
    double label_noise_prob = 0.0;
    uint64_t seed = 0;
};

struct CvOutputs {
    PanopticSegOutput ps;
    DetectionOutput owod;
    SceneGraphOutput sgg;
    OcrOutput ocr;
};

enum class QaCategory { existence, position, relation, ocr };

const char* qa_category_name(QaCategory c);
QaCategory qa_category_from_name(const std::string& s);

struct QaPair {
    std::string question;
    std::string answer;
    QaCategory category = QaCategory::existence;
};

// The dominant-axis spatial predicate from subject to object cell; exactly
// one predicate holds per ordered pair (horizontal wins diagonal ties).
std::string relation_predicate(int subj_row, int subj_col, int obj_row, int obj_col);

// Deterministic scene from (seed, difficulty). Difficulty 0 places exactly
// one object and no text; 1 places 2-3 objects and 0-1 texts; 2 places 3-5
// objects and 1-2 texts. Object classes within a scene are distinct.
SyntheticScene make_scene(uint64_t seed, int difficulty, int grid = 4);

// Objects become solid color blocks, texts become per-string glyph patterns.
Image render_image(const SyntheticScene& scene, int cell_px);

// Ground-truth CV outputs; with nonzero noise, entries are independently
// dropped or relabeled (relabeled PS segments become unknown).
CvOutputs derive_cv_outputs(const SyntheticScene& scene, const NoiseConfig& noise, int cell_px);

// Question about the scene in the given category; throws GenerationError if
// the scene cannot support it.
QaPair make_qa(const SyntheticScene& scene, QaCategory category, Rng& rng);

// Closed vocabulary covering templates, lexicon words, QA wording and the
// coordinate literals reachable on a grid of the given size.
Vocabulary build_vocabulary(const Lexicon& lexicon, int grid);

// --- scene JSON schema (shared by the CLI and tests) ---

std::string scene_to_json(const SyntheticScene& scene, const CvOutputs& cv);
void scene_from_json(const std::string& text, SyntheticScene& scene, CvOutputs& cv);
SyntheticScene scene_from_json_file(const std::string& path, CvOutputs& cv);

// --- dataset manifests: (seed, difficulty, category) triples ---

struct ManifestEntry {
    uint64_t seed = 0;
    int difficulty = 0;
    QaCategory category = QaCategory::existence;
};

std::string manifest_to_json(const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> manifest_from_json(const std::string& text);
std::vector<ManifestEntry> manifest_from_json_file(const std::string& path);

// Balanced manifest: categories cycle per entry, difficulties chosen so each
// category is always supported.
std::vector<ManifestEntry> make_manifest(int count, uint64_t seed_base);

}  // namespace moai
