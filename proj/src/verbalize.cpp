#include "moai/verbalize.hpp"

#include <cctype>
#include <cstdio>

namespace moai {

const char* const kBoxTemplatePrefix = "The image includes bounding boxes and their objects: ";
const char* const kSggTemplatePrefix = "The image includes relationships between objects: ";
const char* const kOcrTemplatePrefix = "The image includes text descriptions: ";

void BoundingBox::validate() const {
    if (!(xmin < xmax) || !(ymin < ymax)) throw ValidationError("bounding box: degenerate extent");
    if (xmin < 0 || ymin < 0 || xmax > 1 || ymax > 1)
        throw ValidationError("bounding box: coordinates outside [0,1]");
}

Vocabulary::Vocabulary() {
    for (const char* s : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(s);
}

int Vocabulary::add(const std::string& token) {
    auto it = token_to_id_.find(token);
    if (it != token_to_id_.end()) return it->second;
    const int id = static_cast<int>(id_to_token_.size());
    id_to_token_.push_back(token);
    token_to_id_[token] = id;
    return id;
}

int Vocabulary::id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) throw IndexError("vocabulary: id out of range");
    return id_to_token_[id];
}

namespace {

std::string format_box(const BoundingBox& b) {
    b.validate();
    char buf[64];
    std::snprintf(buf, sizeof(buf), "[%.2f, %.2f, %.2f, %.2f]", b.xmin, b.ymin, b.xmax, b.ymax);
    return buf;
}

std::string join(const std::vector<std::string>& parts) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out += ", ";
        out += parts[i];
    }
    return out;
}

}  // namespace

std::string verbalize_ps(const PanopticSegOutput& ps) {
    if (ps.segments.empty()) return "";
    std::vector<std::string> entries;
    for (const auto& seg : ps.segments) {
        const std::string name = seg.category_name.empty() ? "unknown" : seg.category_name;
        entries.push_back(format_box(seg.bbox) + " " + name);
    }
    return kBoxTemplatePrefix + join(entries);
}

std::string verbalize_owod(const DetectionOutput& det) {
    if (det.detections.empty()) return "";
    std::vector<std::string> entries;
    for (const auto& d : det.detections) {
        if (d.score < 0.0 || d.score > 1.0)
            throw ValidationError("detection: score outside [0,1]");
        entries.push_back(format_box(d.bbox) + " " + d.category_name);
    }
    return kBoxTemplatePrefix + join(entries);
}

std::string verbalize_sgg(const SceneGraphOutput& sg) {
    if (sg.triplets.empty()) return "";
    std::vector<std::string> entries;
    for (const auto& t : sg.triplets) {
        if (t.subject.empty() || t.predicate.empty() || t.object.empty())
            throw ValidationError("scene graph: empty triplet slot");
        entries.push_back(t.subject + " " + t.predicate + " " + t.object);
    }
    return kSggTemplatePrefix + join(entries);
}

std::string verbalize_ocr(const OcrOutput& ocr) {
    if (ocr.items.empty()) return "";
    std::vector<std::string> entries;
    for (const auto& item : ocr.items) {
        if (item.text.empty()) throw ValidationError("ocr: empty text");
        entries.push_back("\"" + item.text + "\"");
    }
    return kOcrTemplatePrefix + join(entries);
}

std::vector<std::string> split_tokens(const std::string& s) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < s.size()) {
        const unsigned char c = s[i];
        if (std::isspace(c)) {
            ++i;
            continue;
        }
        if (std::isalpha(c)) {
            size_t j = i;
            while (j < s.size() && std::isalpha(static_cast<unsigned char>(s[j]))) ++j;
            out.push_back(s.substr(i, j - i));
            i = j;
        } else if (std::isdigit(c)) {
            // decimal literal: digits with optional fraction, kept atomic
            size_t j = i;
            while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
            if (j < s.size() && s[j] == '.' && j + 1 < s.size() &&
                std::isdigit(static_cast<unsigned char>(s[j + 1]))) {
                ++j;
                while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
            }
            out.push_back(s.substr(i, j - i));
            i = j;
        } else {
            out.push_back(s.substr(i, 1));
            ++i;
        }
    }
    return out;
}

std::vector<int> tokenize(const std::string& s, const Vocabulary& vocab) {
    std::vector<int> ids;
    for (const auto& tok : split_tokens(s)) ids.push_back(vocab.id(tok));
    return ids;
}

std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out += " ";
        out += vocab.token(ids[i]);
    }
    return out;
}

Tensor embed_tokens(const std::vector<int>& ids, const Tensor& embedding) {
    return embedding_rows(embedding, ids);
}

Tensor ps_locality_tokens(const PanopticSegOutput& ps, const VisionEncoderToy& encoder,
                          const MlpConnector& connector) {
    const auto& grid = ps.label_grid;
    if (grid.empty() || grid[0].empty()) throw ConfigError("ps locality: empty label grid");
    const int h = static_cast<int>(grid.size());
    const int w = static_cast<int>(grid[0].size());
    const int patch = encoder.config().patch_size;
    if (h % patch != 0 || w % patch != 0)
        throw ConfigError("ps locality: grid not divisible by patch size");
    const int channels = encoder.config().in_channels;

    Image onehot = Image::filled(h, w, channels, 0.0);
    for (int y = 0; y < h; ++y) {
        if (static_cast<int>(grid[y].size()) != w)
            throw ShapeError("ps locality: ragged label grid");
        for (int x = 0; x < w; ++x) {
            const int id = grid[y][x];
            if (id < 0 || id >= channels) throw IndexError("ps locality: label id out of range");
            onehot.at(y, x, id) = 1.0;
        }
    }
    return connector.connect(encoder.encode(onehot));
}

AuxTokenBundle build_aux_bundle(const PanopticSegOutput& ps, const DetectionOutput& det,
                                const SceneGraphOutput& sg, const OcrOutput& ocr,
                                const Vocabulary& vocab, const Tensor& embedding,
                                const VisionEncoderToy& ps_encoder, const MlpConnector& connector,
                                const AuxSourceMask& mask) {
    const int d = embedding.cols();
    auto embed_text = [&](const std::string& text) {
        return embed_tokens(tokenize(text, vocab), embedding);
    };

    AuxTokenBundle bundle;
    if (mask.ps) {
        Tensor text = embed_text(verbalize_ps(ps));
        Tensor locality = ps_locality_tokens(ps, ps_encoder, connector);
        bundle.a_ps = concat_rows({text, locality});
    } else {
        bundle.a_ps = Tensor::zeros({0, d});
    }
    bundle.a_owod = mask.owod ? embed_text(verbalize_owod(det)) : Tensor::zeros({0, d});
    bundle.a_sgg = mask.sgg ? embed_text(verbalize_sgg(sg)) : Tensor::zeros({0, d});
    bundle.a_ocr = mask.ocr ? embed_text(verbalize_ocr(ocr)) : Tensor::zeros({0, d});
    return bundle;
}

}  // namespace moai
