#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "moai/scenegen.hpp"
#include "moai/verbalize.hpp"

using namespace moai;

namespace {

struct LocalityRig {
    ParamRegistry reg;
    VisionEncoderToy encoder;
    MlpConnector connector;

    LocalityRig(int channels, int patch, int d)
        : encoder(VisionEncoderConfig{patch, channels, 16, 1, 2, 2}, reg, "vision.ps", 99),
          connector(16, 24, d, reg, "connector", 99) {}
};

}  // namespace

TEST_CASE("template prefixes are byte-exact") {
    CHECK(std::string(kBoxTemplatePrefix) ==
          "The image includes bounding boxes and their objects: ");
    CHECK(std::string(kSggTemplatePrefix) == "The image includes relationships between objects: ");
    CHECK(std::string(kOcrTemplatePrefix) == "The image includes text descriptions: ");
}

TEST_CASE("verbalize_ps formats and handles unknown") {
    PanopticSegOutput ps;
    ps.segments.push_back({"dog", {0.10, 0.20, 0.50, 0.60}});
    CHECK(verbalize_ps(ps) ==
          "The image includes bounding boxes and their objects: [0.10, 0.20, 0.50, 0.60] dog");

    PanopticSegOutput empty;
    CHECK(verbalize_ps(empty) == "");

    PanopticSegOutput unk;
    unk.segments.push_back({"", {0.00, 0.00, 0.25, 0.25}});
    CHECK(verbalize_ps(unk) ==
          "The image includes bounding boxes and their objects: [0.00, 0.00, 0.25, 0.25] unknown");

    PanopticSegOutput bad;
    bad.segments.push_back({"dog", {0.5, 0.2, 0.1, 0.6}});
    CHECK_THROWS_AS(verbalize_ps(bad), ValidationError);
}

TEST_CASE("verbalize_owod matches ps template and validates scores") {
    DetectionOutput det;
    det.detections.push_back({"cat", {0.00, 0.00, 1.00, 1.00}, 0.9});
    CHECK(verbalize_owod(det) ==
          "The image includes bounding boxes and their objects: [0.00, 0.00, 1.00, 1.00] cat");

    CHECK(verbalize_owod(DetectionOutput{}) == "");

    DetectionOutput two;
    two.detections.push_back({"cat", {0.00, 0.00, 0.50, 0.50}, 0.9});
    two.detections.push_back({"dog", {0.50, 0.50, 1.00, 1.00}, 0.8});
    // order-preserving, ", "-joined assembly
    const std::string expected =
        std::string("The image includes bounding boxes and their objects: ") +
        "[0.00, 0.00, 0.50, 0.50] cat, [0.50, 0.50, 1.00, 1.00] dog";
    CHECK(verbalize_owod(two) == expected);

    DetectionOutput bad;
    bad.detections.push_back({"cat", {0.0, 0.0, 1.0, 1.0}, 1.5});
    CHECK_THROWS_AS(verbalize_owod(bad), ValidationError);
}

TEST_CASE("verbalize_sgg") {
    SceneGraphOutput sg;
    sg.triplets.push_back({"person", "holding", "guitar"});
    CHECK(verbalize_sgg(sg) ==
          "The image includes relationships between objects: person holding guitar");

    CHECK(verbalize_sgg(SceneGraphOutput{}) == "");

    SceneGraphOutput three;
    three.triplets.push_back({"a", "left of", "b"});
    three.triplets.push_back({"b", "above", "c"});
    three.triplets.push_back({"c", "below", "a"});
    CHECK(verbalize_sgg(three) ==
          "The image includes relationships between objects: a left of b, b above c, c below a");

    SceneGraphOutput bad;
    bad.triplets.push_back({"a", "", "b"});
    CHECK_THROWS_AS(verbalize_sgg(bad), ValidationError);
}

TEST_CASE("verbalize_ocr quotes texts") {
    OcrOutput ocr;
    ocr.items.push_back({"STOP", {0.0, 0.0, 0.25, 0.25}});
    CHECK(verbalize_ocr(ocr) == "The image includes text descriptions: \"STOP\"");

    CHECK(verbalize_ocr(OcrOutput{}) == "");

    OcrOutput two;
    two.items.push_back({"GO", {0.0, 0.0, 0.25, 0.25}});
    two.items.push_back({"STOP", {0.5, 0.5, 0.75, 0.75}});
    CHECK(verbalize_ocr(two) == "The image includes text descriptions: \"GO\", \"STOP\"");

    OcrOutput bad;
    bad.items.push_back({"", {0.0, 0.0, 0.25, 0.25}});
    CHECK_THROWS_AS(verbalize_ocr(bad), ValidationError);
}

TEST_CASE("tokenizer") {
    Vocabulary vocab;
    const int dog = vocab.add("dog");
    const int comma = vocab.add(",");

    CHECK(tokenize("", vocab).empty());

    auto ids = tokenize("dog , dog", vocab);
    CHECK(ids == std::vector<int>{dog, comma, dog});

    CHECK(tokenize("zebra", vocab) == std::vector<int>{Vocabulary::kUnk});

    // punctuation adjacency splits; decimal literals stay atomic
    vocab.add("0.25");
    vocab.add("[");
    auto parts = split_tokens("[0.25, dog");
    CHECK(parts == std::vector<std::string>{"[", "0.25", ",", "dog"});

    // round trip for in-vocab text
    Vocabulary v2;
    for (const char* w : {"the", "dog", "sat"}) v2.add(w);
    auto rt = tokenize("the dog sat", v2);
    CHECK(detokenize(rt, v2) == "the dog sat");
}

TEST_CASE("embed_tokens") {
    Tensor table = Tensor::from_data({3, 2}, {0, 1, 10, 11, 20, 21});
    Tensor empty = embed_tokens({}, table);
    CHECK(empty.rows() == 0);
    CHECK(empty.cols() == 2);

    Tensor one = embed_tokens({2}, table);
    CHECK(one.at(0, 0) == 20.0);
    CHECK(one.at(0, 1) == 21.0);

    Tensor fwd = embed_tokens({0, 1, 2}, table);
    Tensor perm = embed_tokens({2, 0, 1}, table);
    for (int j = 0; j < 2; ++j) {
        CHECK(perm.at(0, j) == fwd.at(2, j));
        CHECK(perm.at(1, j) == fwd.at(0, j));
        CHECK(perm.at(2, j) == fwd.at(1, j));
    }
}

TEST_CASE("embed(tokenize(s)) has one row per emitted token") {
    Vocabulary vocab = build_vocabulary(Lexicon::standard(), 4);
    Tensor table = Tensor::zeros({vocab.size(), 8});
    PanopticSegOutput ps;
    ps.segments.push_back({"dog", {0.00, 0.25, 0.25, 0.50}});
    ps.segments.push_back({"cat", {0.50, 0.50, 0.75, 0.75}});
    const std::string text = verbalize_ps(ps);
    const auto toks = tokenize(text, vocab);
    CHECK(embed_tokens(toks, table).rows() == static_cast<int>(toks.size()));
    for (int id : toks) CHECK(id != Vocabulary::kUnk);  // closed vocab covers the templates
}

TEST_CASE("ps locality tokens") {
    const int channels = 4, patch = 2, d = 6;
    LocalityRig rig(channels, patch, d);

    PanopticSegOutput ps;
    ps.label_grid.assign(4, std::vector<int>(4, 0));

    // all-unknown grid: every patch identical, so all rows equal
    Tensor loc = ps_locality_tokens(ps, rig.encoder, rig.connector);
    CHECK(loc.rows() == 4);  // (4/2)*(4/2)
    CHECK(loc.cols() == d);
    for (int i = 1; i < 4; ++i)
        for (int j = 0; j < d; ++j) CHECK(loc.at(i, j) == doctest::Approx(loc.at(0, j)).epsilon(1e-12));

    // translating a segment by one patch permutes the output rows
    PanopticSegOutput a = ps;
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) a.label_grid[y][x] = 3;  // patch (0,0)
    PanopticSegOutput b = ps;
    for (int y = 0; y < 2; ++y)
        for (int x = 2; x < 4; ++x) b.label_grid[y][x] = 3;  // patch (0,1)
    Tensor la = ps_locality_tokens(a, rig.encoder, rig.connector);
    Tensor lb = ps_locality_tokens(b, rig.encoder, rig.connector);
    for (int j = 0; j < d; ++j) {
        CHECK(la.at(0, j) == doctest::Approx(lb.at(1, j)).epsilon(1e-9));
        CHECK(la.at(1, j) == doctest::Approx(lb.at(0, j)).epsilon(1e-9));
        CHECK(la.at(2, j) == doctest::Approx(lb.at(2, j)).epsilon(1e-9));
        CHECK(la.at(3, j) == doctest::Approx(lb.at(3, j)).epsilon(1e-9));
    }

    // grid/patch mismatch
    PanopticSegOutput ragged;
    ragged.label_grid.assign(3, std::vector<int>(4, 0));
    CHECK_THROWS_AS(ps_locality_tokens(ragged, rig.encoder, rig.connector), ConfigError);

    PanopticSegOutput outofrange;
    outofrange.label_grid.assign(4, std::vector<int>(4, channels));
    CHECK_THROWS_AS(ps_locality_tokens(outofrange, rig.encoder, rig.connector), IndexError);
}

TEST_CASE("aux bundle assembly") {
    const int channels = 4, patch = 2, d = 6;
    LocalityRig rig(channels, patch, d);
    Vocabulary vocab = build_vocabulary(Lexicon::standard(), 4);
    Tensor table = Tensor::zeros({vocab.size(), d});

    PanopticSegOutput ps;
    ps.label_grid.assign(4, std::vector<int>(4, 0));

    // everything empty except the locality block
    AuxTokenBundle bundle = build_aux_bundle(ps, {}, {}, {}, vocab, table, rig.encoder,
                                             rig.connector);
    CHECK(bundle.a_ps.rows() == 4);  // locality only
    CHECK(bundle.a_owod.rows() == 0);
    CHECK(bundle.a_sgg.rows() == 0);
    CHECK(bundle.a_ocr.rows() == 0);
    CHECK(bundle.a_ps.cols() == d);
    CHECK(bundle.a_owod.cols() == d);

    // known fixture: token counts add up component-wise
    ps.segments.push_back({"dog", {0.00, 0.00, 0.25, 0.25}});
    DetectionOutput det;
    det.detections.push_back({"cat", {0.25, 0.25, 0.50, 0.50}, 1.0});
    SceneGraphOutput sg;
    sg.triplets.push_back({"dog", "left of", "cat"});
    OcrOutput ocr;
    ocr.items.push_back({"STOP", {0.75, 0.75, 1.00, 1.00}});
    AuxTokenBundle full = build_aux_bundle(ps, det, sg, ocr, vocab, table, rig.encoder,
                                           rig.connector);
    const int ps_text = static_cast<int>(tokenize(verbalize_ps(ps), vocab).size());
    const int owod_text = static_cast<int>(tokenize(verbalize_owod(det), vocab).size());
    const int sgg_text = static_cast<int>(tokenize(verbalize_sgg(sg), vocab).size());
    const int ocr_text = static_cast<int>(tokenize(verbalize_ocr(ocr), vocab).size());
    CHECK(full.a_ps.rows() == ps_text + 4);
    CHECK(full.a_owod.rows() == owod_text);
    CHECK(full.a_sgg.rows() == sgg_text);
    CHECK(full.a_ocr.rows() == ocr_text);
    CHECK(full.total_tokens() == ps_text + 4 + owod_text + sgg_text + ocr_text);

    // source masking drops the whole component
    AuxTokenBundle masked = build_aux_bundle(ps, det, sg, ocr, vocab, table, rig.encoder,
                                             rig.connector, {false, true, false, true});
    CHECK(masked.a_ps.rows() == 0);
    CHECK(masked.a_sgg.rows() == 0);
    CHECK(masked.a_owod.rows() == owod_text);
}

TEST_CASE("verbalization is order-preserving and injective on a fixture corpus") {
    std::set<std::string> scenes;
    std::set<std::string> verbalizations;
    for (uint64_t seed = 1; seed <= 40; ++seed) {
        for (int difficulty : {0, 1, 2}) {
            SyntheticScene scene = make_scene(seed, difficulty);
            CvOutputs cv = derive_cv_outputs(scene, {}, 4);
            scenes.insert(scene_to_json(scene, cv));
            verbalizations.insert(verbalize_ps(cv.ps) + "\n" + verbalize_owod(cv.owod) + "\n" +
                                  verbalize_sgg(cv.sgg) + "\n" + verbalize_ocr(cv.ocr));
        }
    }
    // distinct scenes map to distinct verbalizations (up to 2-decimal
    // coordinate quantization, which a 4-cell grid never triggers)
    CHECK(verbalizations.size() == scenes.size());
}
