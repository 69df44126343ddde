#include "moai/scenegen.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace moai {

using nlohmann::json;

const Lexicon& Lexicon::standard() {
    static const Lexicon lex{
        {"dog",  "cat",   "car",   "tree",  "house", "bird",  "fish",  "chair",
         "table", "cup",  "book",  "ball",  "star",  "key",   "lamp",  "shoe",
         "hat",   "box",  "clock", "flower", "boat",  "plane", "horse", "mug"},
        {"left of", "right of", "above", "below"},
        {"STOP", "GO", "EXIT", "OPEN", "SALE", "MENU", "TAXI", "BUS", "CAFE", "BANK", "HOTEL",
         "PARK", "SHOP", "FREE", "SLOW", "NORTH"},
        {"red", "green", "blue", "yellow", "purple", "orange", "cyan", "white"},
    };
    return lex;
}

int Lexicon::class_id(const std::string& name) const {
    for (size_t i = 0; i < object_classes.size(); ++i)
        if (object_classes[i] == name) return static_cast<int>(i) + 1;
    return 0;
}

const char* qa_category_name(QaCategory c) {
    switch (c) {
        case QaCategory::existence: return "existence";
        case QaCategory::position: return "position";
        case QaCategory::relation: return "relation";
        case QaCategory::ocr: return "ocr";
    }
    throw ConfigError("unknown qa category");
}

QaCategory qa_category_from_name(const std::string& s) {
    if (s == "existence") return QaCategory::existence;
    if (s == "position") return QaCategory::position;
    if (s == "relation") return QaCategory::relation;
    if (s == "ocr") return QaCategory::ocr;
    throw ConfigError("unknown qa category: " + s);
}

std::string relation_predicate(int sr, int sc, int orow, int ocol) {
    const int dr = orow - sr;
    const int dc = ocol - sc;
    if (dr == 0 && dc == 0) throw ValidationError("relation: identical cells");
    if (std::abs(dc) >= std::abs(dr) && dc != 0) return dc > 0 ? "left of" : "right of";
    return dr > 0 ? "above" : "below";
}

namespace {

void derive_relations(SyntheticScene& scene) {
    scene.relations.clear();
    for (size_t i = 0; i < scene.objects.size(); ++i) {
        for (size_t j = 0; j < scene.objects.size(); ++j) {
            if (i == j) continue;
            const auto& a = scene.objects[i];
            const auto& b = scene.objects[j];
            scene.relations.push_back(
                {a.class_name, relation_predicate(a.row, a.col, b.row, b.col), b.class_name});
        }
    }
}

BoundingBox cell_box(int row, int col, int grid) {
    const double g = grid;
    return BoundingBox{col / g, row / g, (col + 1) / g, (row + 1) / g};
}

}  // namespace

SyntheticScene make_scene(uint64_t seed, int difficulty, int grid) {
    if (difficulty < 0 || difficulty > 2) throw ConfigError("make_scene: difficulty must be 0..2");
    if (grid < 2) throw ConfigError("make_scene: grid too small");
    const auto& lex = Lexicon::standard();
    Rng rng(mix_seed(0x5ce7eULL, seed));

    int n_objects = 0, n_texts = 0;
    switch (difficulty) {
        case 0: n_objects = 1; n_texts = 0; break;
        case 1: n_objects = 2 + rng.uniform_int(0, 1); n_texts = rng.uniform_int(0, 1); break;
        case 2: n_objects = 3 + rng.uniform_int(0, 2); n_texts = 1 + rng.uniform_int(0, 1); break;
    }

    SyntheticScene scene;
    scene.seed = seed;
    scene.grid = grid;

    // distinct cells across objects and texts
    std::vector<int> cells(grid * grid);
    for (size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
    rng.shuffle(cells);

    // distinct classes within a scene
    std::vector<int> class_order(lex.object_classes.size());
    for (size_t i = 0; i < class_order.size(); ++i) class_order[i] = static_cast<int>(i);
    rng.shuffle(class_order);

    int next_cell = 0;
    for (int i = 0; i < n_objects; ++i) {
        const int cell = cells[next_cell++];
        const int cls = class_order[i];
        scene.objects.push_back({lex.object_classes[cls],
                                 lex.colors[cls % lex.colors.size()], cell / grid, cell % grid});
    }
    for (int i = 0; i < n_texts; ++i) {
        const int cell = cells[next_cell++];
        const int t = static_cast<int>(rng.uniform_below(lex.text_strings.size()));
        scene.texts.push_back({lex.text_strings[t], cell / grid, cell % grid});
    }
    derive_relations(scene);
    return scene;
}

Image render_image(const SyntheticScene& scene, int cell_px) {
    const auto& lex = Lexicon::standard();
    const int side = scene.grid * cell_px;
    Image img = Image::filled(side, side, 3, 0.1);

    auto color_rgb = [&](const std::string& name) -> std::array<double, 3> {
        static const std::array<std::array<double, 3>, 8> palette{{{1, 0, 0},
                                                                   {0, 1, 0},
                                                                   {0, 0, 1},
                                                                   {1, 1, 0},
                                                                   {0.6, 0, 0.8},
                                                                   {1, 0.55, 0},
                                                                   {0, 1, 1},
                                                                   {1, 1, 1}}};
        for (size_t i = 0; i < lex.colors.size(); ++i)
            if (lex.colors[i] == name) return palette[i];
        throw ValidationError("render: unknown color " + name);
    };

    for (const auto& obj : scene.objects) {
        const auto rgb = color_rgb(obj.color);
        for (int y = 0; y < cell_px; ++y)
            for (int x = 0; x < cell_px; ++x)
                for (int ch = 0; ch < 3; ++ch)
                    img.at(obj.row * cell_px + y, obj.col * cell_px + x, ch) = rgb[ch];
    }
    for (const auto& text : scene.texts) {
        // per-string glyph: deterministic bit pattern on a dark cell
        const uint64_t key = fnv1a(text.text);
        for (int y = 0; y < cell_px; ++y) {
            for (int x = 0; x < cell_px; ++x) {
                uint64_t s = key + static_cast<uint64_t>(y) * 131 + x;
                const double v = (splitmix64(s) & 1) ? 1.0 : 0.0;
                for (int ch = 0; ch < 3; ++ch)
                    img.at(text.row * cell_px + y, text.col * cell_px + x, ch) = v;
            }
        }
    }
    return img;
}

CvOutputs derive_cv_outputs(const SyntheticScene& scene, const NoiseConfig& noise, int cell_px) {
    if (noise.drop_prob < 0 || noise.drop_prob > 1 || noise.label_noise_prob < 0 ||
        noise.label_noise_prob > 1)
        throw ConfigError("derive_cv_outputs: probabilities must be in [0,1]");
    const auto& lex = Lexicon::standard();
    const bool noisy = noise.drop_prob > 0 || noise.label_noise_prob > 0;
    Rng rng(mix_seed(0xc0de0011ULL, noise.seed));

    CvOutputs out;
    const int side = scene.grid * cell_px;
    out.ps.label_grid.assign(side, std::vector<int>(side, 0));

    // panoptic segmentation
    for (const auto& obj : scene.objects) {
        if (noisy && rng.uniform() < noise.drop_prob) continue;
        std::string name = obj.class_name;
        int label = lex.class_id(name);
        if (noisy && rng.uniform() < noise.label_noise_prob) {
            name = "unknown";
            label = 0;
        }
        out.ps.segments.push_back({name, cell_box(obj.row, obj.col, scene.grid)});
        for (int y = 0; y < cell_px; ++y)
            for (int x = 0; x < cell_px; ++x)
                out.ps.label_grid[obj.row * cell_px + y][obj.col * cell_px + x] = label;
    }

    // open-world detection
    for (const auto& obj : scene.objects) {
        if (noisy && rng.uniform() < noise.drop_prob) continue;
        std::string name = obj.class_name;
        if (noisy && rng.uniform() < noise.label_noise_prob) {
            const auto other =
                lex.object_classes[rng.uniform_below(lex.object_classes.size())];
            name = other;
        }
        const double score = noisy ? 0.5 + 0.5 * rng.uniform() : 1.0;
        out.owod.detections.push_back({name, cell_box(obj.row, obj.col, scene.grid), score});
    }

    // scene graph
    for (const auto& rel : scene.relations) {
        if (noisy && rng.uniform() < noise.drop_prob) continue;
        std::string pred = rel.predicate;
        if (noisy && rng.uniform() < noise.label_noise_prob)
            pred = lex.predicates[rng.uniform_below(lex.predicates.size())];
        out.sgg.triplets.push_back({rel.subject, pred, rel.object});
    }

    // ocr
    for (const auto& text : scene.texts) {
        if (noisy && rng.uniform() < noise.drop_prob) continue;
        std::string s = text.text;
        if (noisy && rng.uniform() < noise.label_noise_prob)
            s = lex.text_strings[rng.uniform_below(lex.text_strings.size())];
        out.ocr.items.push_back({s, cell_box(text.row, text.col, scene.grid)});
    }
    return out;
}

QaPair make_qa(const SyntheticScene& scene, QaCategory category, Rng& rng) {
    const auto& lex = Lexicon::standard();
    switch (category) {
        case QaCategory::existence: {
            if (scene.objects.empty()) throw GenerationError("existence: scene has no objects");
            const bool positive = rng.uniform() < 0.5;
            if (positive) {
                const auto& obj = scene.objects[rng.uniform_below(scene.objects.size())];
                return {"Is there a " + obj.class_name + " in the image?", "yes",
                        QaCategory::existence};
            }
            std::vector<std::string> absent;
            for (const auto& cls : lex.object_classes) {
                bool present = false;
                for (const auto& obj : scene.objects) present = present || obj.class_name == cls;
                if (!present) absent.push_back(cls);
            }
            if (absent.empty()) throw GenerationError("existence: no absent class available");
            const auto& cls = absent[rng.uniform_below(absent.size())];
            return {"Is there a " + cls + " in the image?", "no", QaCategory::existence};
        }
        case QaCategory::position: {
            if (scene.objects.empty()) throw GenerationError("position: scene has no objects");
            if (scene.grid % 2 != 0) throw GenerationError("position: grid must be even");
            const auto& obj = scene.objects[rng.uniform_below(scene.objects.size())];
            const std::string vert = obj.row < scene.grid / 2 ? "top" : "bottom";
            const std::string horiz = obj.col < scene.grid / 2 ? "left" : "right";
            return {"Where is the " + obj.class_name + " in the image?", vert + " " + horiz,
                    QaCategory::position};
        }
        case QaCategory::relation: {
            if (scene.objects.size() < 2)
                throw GenerationError("relation: scene needs at least two objects");
            const size_t i = rng.uniform_below(scene.objects.size());
            size_t j = rng.uniform_below(scene.objects.size() - 1);
            if (j >= i) ++j;
            const auto& a = scene.objects[i];
            const auto& b = scene.objects[j];
            const std::string pred = relation_predicate(a.row, a.col, b.row, b.col);
            std::string answer = pred == "left of" ? "left"
                                 : pred == "right of" ? "right"
                                                      : pred;
            return {"Where is the " + a.class_name + " relative to the " + b.class_name + "?",
                    answer, QaCategory::relation};
        }
        case QaCategory::ocr: {
            if (scene.texts.empty()) throw GenerationError("ocr: scene has no text");
            return {"What text is written in the image?", scene.texts[0].text, QaCategory::ocr};
        }
    }
    throw ConfigError("make_qa: unknown category");
}

Vocabulary build_vocabulary(const Lexicon& lexicon, int grid) {
    Vocabulary vocab;
    for (const char* p : {"[", "]", ",", "\"", ":", "?", "."}) vocab.add(p);
    for (const char* w :
         {"The", "image", "includes", "bounding", "boxes", "and", "their", "objects",
          "relationships", "between", "text", "descriptions", "unknown"})
        vocab.add(w);
    for (const char* w : {"Is", "there", "a", "in", "the", "Where", "is", "relative", "to",
                          "What", "written"})
        vocab.add(w);
    for (const char* w : {"yes", "no", "top", "bottom", "left", "right", "above", "below", "of"})
        vocab.add(w);
    for (int i = 0; i <= grid; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%.2f", static_cast<double>(i) / grid);
        vocab.add(buf);
    }
    for (const auto& w : lexicon.object_classes) vocab.add(w);
    for (const auto& w : lexicon.text_strings) vocab.add(w);
    return vocab;
}

// --- JSON serialization ---

namespace {

json box_to_json(const BoundingBox& b) { return json::array({b.xmin, b.ymin, b.xmax, b.ymax}); }

BoundingBox box_from_json(const json& j) {
    if (!j.is_array() || j.size() != 4) throw ValidationError("scene json: bad bbox");
    return BoundingBox{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
                       j[3].get<double>()};
}

}  // namespace

std::string scene_to_json(const SyntheticScene& scene, const CvOutputs& cv) {
    json j;
    j["grid"] = scene.grid;
    j["objects"] = json::array();
    for (const auto& o : scene.objects)
        j["objects"].push_back(
            {{"class", o.class_name}, {"color", o.color}, {"cell", {o.row, o.col}}});
    j["relations"] = json::array();
    for (const auto& r : scene.relations)
        j["relations"].push_back(
            {{"subject", r.subject}, {"predicate", r.predicate}, {"object", r.object}});
    j["texts"] = json::array();
    for (const auto& t : scene.texts)
        j["texts"].push_back({{"string", t.text}, {"cell", {t.row, t.col}}});

    json ps;
    ps["label_grid"] = cv.ps.label_grid;
    ps["segments"] = json::array();
    for (const auto& s : cv.ps.segments)
        ps["segments"].push_back({{"category", s.category_name}, {"bbox", box_to_json(s.bbox)}});
    json owod;
    owod["detections"] = json::array();
    for (const auto& d : cv.owod.detections)
        owod["detections"].push_back(
            {{"category", d.category_name}, {"bbox", box_to_json(d.bbox)}, {"score", d.score}});
    json sgg;
    sgg["triplets"] = json::array();
    for (const auto& t : cv.sgg.triplets)
        sgg["triplets"].push_back(
            {{"subject", t.subject}, {"predicate", t.predicate}, {"object", t.object}});
    json ocr;
    ocr["items"] = json::array();
    for (const auto& i : cv.ocr.items)
        ocr["items"].push_back({{"text", i.text}, {"bbox", box_to_json(i.bbox)}});
    j["cv_outputs"] = {{"ps", ps}, {"owod", owod}, {"sgg", sgg}, {"ocr", ocr}};
    return j.dump(2);
}

void scene_from_json(const std::string& text, SyntheticScene& scene, CvOutputs& cv) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("scene json: parse failure: ") + e.what());
    }
    try {
        scene = SyntheticScene{};
        cv = CvOutputs{};
        scene.grid = j.at("grid").get<int>();
        for (const auto& o : j.at("objects")) {
            SceneObject obj;
            obj.class_name = o.at("class").get<std::string>();
            obj.color = o.at("color").get<std::string>();
            obj.row = o.at("cell").at(0).get<int>();
            obj.col = o.at("cell").at(1).get<int>();
            scene.objects.push_back(obj);
        }
        for (const auto& r : j.at("relations"))
            scene.relations.push_back({r.at("subject").get<std::string>(),
                                       r.at("predicate").get<std::string>(),
                                       r.at("object").get<std::string>()});
        for (const auto& t : j.at("texts")) {
            SceneText st;
            st.text = t.at("string").get<std::string>();
            st.row = t.at("cell").at(0).get<int>();
            st.col = t.at("cell").at(1).get<int>();
            scene.texts.push_back(st);
        }
        const auto& c = j.at("cv_outputs");
        cv.ps.label_grid = c.at("ps").at("label_grid").get<std::vector<std::vector<int>>>();
        for (const auto& s : c.at("ps").at("segments"))
            cv.ps.segments.push_back(
                {s.at("category").get<std::string>(), box_from_json(s.at("bbox"))});
        for (const auto& d : c.at("owod").at("detections"))
            cv.owod.detections.push_back({d.at("category").get<std::string>(),
                                          box_from_json(d.at("bbox")), d.at("score").get<double>()});
        for (const auto& t : c.at("sgg").at("triplets"))
            cv.sgg.triplets.push_back({t.at("subject").get<std::string>(),
                                       t.at("predicate").get<std::string>(),
                                       t.at("object").get<std::string>()});
        for (const auto& i : c.at("ocr").at("items"))
            cv.ocr.items.push_back({i.at("text").get<std::string>(), box_from_json(i.at("bbox"))});
    } catch (const json::exception& e) {
        throw ValidationError(std::string("scene json: bad schema: ") + e.what());
    }
}

SyntheticScene scene_from_json_file(const std::string& path, CvOutputs& cv) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open scene file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    SyntheticScene scene;
    scene_from_json(ss.str(), scene, cv);
    return scene;
}

std::string manifest_to_json(const std::vector<ManifestEntry>& entries) {
    json j;
    j["entries"] = json::array();
    for (const auto& e : entries)
        j["entries"].push_back({{"seed", e.seed},
                                {"difficulty", e.difficulty},
                                {"category", qa_category_name(e.category)}});
    return j.dump(2);
}

std::vector<ManifestEntry> manifest_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("manifest json: parse failure: ") + e.what());
    }
    std::vector<ManifestEntry> entries;
    try {
        for (const auto& e : j.at("entries"))
            entries.push_back({e.at("seed").get<uint64_t>(), e.at("difficulty").get<int>(),
                               qa_category_from_name(e.at("category").get<std::string>())});
    } catch (const json::exception& e) {
        throw ValidationError(std::string("manifest json: bad schema: ") + e.what());
    }
    return entries;
}

std::vector<ManifestEntry> manifest_from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return manifest_from_json(ss.str());
}

std::vector<ManifestEntry> make_manifest(int count, uint64_t seed_base) {
    static const QaCategory cycle[4] = {QaCategory::existence, QaCategory::position,
                                        QaCategory::relation, QaCategory::ocr};
    std::vector<ManifestEntry> entries;
    Rng rng(mix_seed(0xda7aULL, seed_base));
    for (int i = 0; i < count; ++i) {
        const QaCategory cat = cycle[i % 4];
        int difficulty = 0;
        switch (cat) {
            case QaCategory::existence:
            case QaCategory::position:
                difficulty = rng.uniform_int(0, 2);
                break;
            case QaCategory::relation:
                difficulty = rng.uniform_int(1, 2);
                break;
            case QaCategory::ocr:
                difficulty = 2;
                break;
        }
        entries.push_back({seed_base + static_cast<uint64_t>(i), difficulty, cat});
    }
    return entries;
}

}  // namespace moai
