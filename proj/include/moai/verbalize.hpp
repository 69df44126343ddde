#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "moai/tensor.hpp"
#include "moai/vision.hpp"

namespace moai {

struct BoundingBox {
    double xmin = 0, ymin = 0, xmax = 0, ymax = 0;
    void validate() const;
};

struct PsSegment {
    std::string category_name;  // empty means unclassifiable
    BoundingBox bbox;
};

// Pixel-level label grid plus per-segment boxes; label id 0 is reserved for
// the unknown class.
struct PanopticSegOutput {
    std::vector<std::vector<int>> label_grid;
    std::vector<PsSegment> segments;
};

struct Detection {
    std::string category_name;
    BoundingBox bbox;
    double score = 1.0;
};

struct DetectionOutput {
    std::vector<Detection> detections;
};

struct SggTriplet {
    std::string subject, predicate, object;
};

struct SceneGraphOutput {
    std::vector<SggTriplet> triplets;
};

struct OcrItem {
    std::string text;
    BoundingBox bbox;
};

struct OcrOutput {
    std::vector<OcrItem> items;
};

// Closed vocabulary with fixed special tokens.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;

    Vocabulary();

    int add(const std::string& token);
    int id(const std::string& token) const;  // kUnk for out-of-vocabulary
    bool contains(const std::string& token) const;
    const std::string& token(int id) const;
    int size() const { return static_cast<int>(id_to_token_.size()); }

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

// The exact template prefixes used for all box-, relation- and text-source
// verbalizations.
extern const char* const kBoxTemplatePrefix;
extern const char* const kSggTemplatePrefix;
extern const char* const kOcrTemplatePrefix;

// Each returns an empty string when the source carries no entries.
std::string verbalize_ps(const PanopticSegOutput& ps);
std::string verbalize_owod(const DetectionOutput& det);
std::string verbalize_sgg(const SceneGraphOutput& sg);
std::string verbalize_ocr(const OcrOutput& ocr);

// Splits on whitespace; words are letter runs or decimal-number literals,
// everything else is a single-character token.
std::vector<std::string> split_tokens(const std::string& s);
std::vector<int> tokenize(const std::string& s, const Vocabulary& vocab);
std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab);

// Column-per-token embedding of a token id sequence; result [N, d].
Tensor embed_tokens(const std::vector<int>& ids, const Tensor& embedding);

// Renders the label grid as a one-hot channel image and runs it through the
// frozen encoder and the connector; one output row per patch in row-major
// order.
Tensor ps_locality_tokens(const PanopticSegOutput& ps, const VisionEncoderToy& encoder,
                          const MlpConnector& connector);

// The four auxiliary token groups, in fixed order [PS, OWOD, SGG, OCR].
// Any group may have zero rows; all share the embedding width.
struct AuxTokenBundle {
    Tensor a_ps, a_owod, a_sgg, a_ocr;

    int total_tokens() const {
        return a_ps.rows() + a_owod.rows() + a_sgg.rows() + a_ocr.rows();
    }
};

struct AuxSourceMask {
    bool ps = true;
    bool owod = true;
    bool sgg = true;
    bool ocr = true;
};

// A_PS carries the serialized text first, locality tokens second. A disabled
// source contributes zero tokens.
AuxTokenBundle build_aux_bundle(const PanopticSegOutput& ps, const DetectionOutput& det,
                                const SceneGraphOutput& sg, const OcrOutput& ocr,
                                const Vocabulary& vocab, const Tensor& embedding,
                                const VisionEncoderToy& ps_encoder, const MlpConnector& connector,
                                const AuxSourceMask& mask = {});

}  // namespace moai
