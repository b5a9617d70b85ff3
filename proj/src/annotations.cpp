#include "posemine/annotations.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

namespace posemine {

using nlohmann::json;

namespace {

// Wraps json access so a wrong type reports the offending field.
const json& field(const json& obj, const char* key, const char* where) {
    const auto it = obj.find(key);
    if (it == obj.end())
        throw ParseError(std::string(where) + ": missing field '" + key + "'");
    return *it;
}

LinkMatrix skeleton_to_links(const json& skeleton, int k, const std::string& where) {
    LinkMatrix links(k);
    for (const json& pair : skeleton) {
        if (!pair.is_array() || pair.size() != 2)
            throw ParseError(where + ": skeleton entries must be [a, b] pairs");
        const int a = pair[0].get<int>() - 1;  // document uses 1-indexed joints
        const int b = pair[1].get<int>() - 1;
        if (a < 0 || b < 0 || a >= k || b >= k || a == b)
            throw ParseError(where + ": skeleton pair (" + std::to_string(a + 1) + ", " +
                             std::to_string(b + 1) + ") outside 1.." + std::to_string(k));
        links.set(a, b, true);
    }
    return links;
}

}  // namespace

const AnnotationCategory& AnnotationSet::category(int id) const {
    for (const AnnotationCategory& c : categories)
        if (c.id == id) return c;
    throw ContractError("annotations: unknown category id " + std::to_string(id));
}

AnnotationSet load_annotations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("annotations: cannot open " + path);

    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError("annotations: " + path + ": parse error at byte " +
                         std::to_string(e.byte) + ": " + e.what());
    }

    AnnotationSet set;
    for (const json& cat : field(doc, "categories", "document")) {
        AnnotationCategory c;
        c.id = field(cat, "id", "category").get<int>();
        const std::string where = "category " + std::to_string(c.id);
        if (cat.contains("name")) c.name = cat["name"].get<std::string>();
        for (const json& n : field(cat, "keypoints", where.c_str()))
            c.keypoint_names.push_back(n.get<std::string>());
        const int k = static_cast<int>(c.keypoint_names.size());
        if (k == 0) throw ParseError(where + ": empty keypoint list");
        c.links = skeleton_to_links(field(cat, "skeleton", where.c_str()), k, where);
        set.categories.push_back(std::move(c));
    }

    for (const json& ann : field(doc, "annotations", "document")) {
        AnnotationInstance inst;
        inst.category_id = field(ann, "category_id", "annotation").get<int>();
        if (ann.contains("image_id")) inst.image_id = ann["image_id"].get<int>();
        const std::string where = "annotation (category " + std::to_string(inst.category_id) + ")";
        const AnnotationCategory& cat = set.category(inst.category_id);

        const json& bbox = field(ann, "bbox", where.c_str());
        if (!bbox.is_array() || bbox.size() != 4)
            throw ParseError(where + ": bbox must be [x, y, w, h]");
        const double bx = bbox[0].get<double>(), by = bbox[1].get<double>();
        const double bw = bbox[2].get<double>(), bh = bbox[3].get<double>();
        if (bw <= 0.0 || bh <= 0.0) throw ParseError(where + ": non-positive bbox size");

        const json& kps = field(ann, "keypoints", where.c_str());
        const int k = static_cast<int>(cat.keypoint_names.size());
        if (!kps.is_array() || static_cast<int>(kps.size()) != 3 * k)
            throw ParseError(where + ": expected " + std::to_string(3 * k) +
                             " keypoint values, got " + std::to_string(kps.size()));

        inst.keypoints.raw_count = k;
        for (int i = 0; i < k; ++i) {
            double u = (kps[3 * i + 0].get<double>() - bx) / bw;
            double v = (kps[3 * i + 1].get<double>() - by) / bh;
            const int vis = kps[3 * i + 2].get<int>();
            double w = vis > 0 ? 1.0 : 0.0;
            if (u < 0.0 || u > 1.0 || v < 0.0 || v > 1.0) {
                u = std::clamp(u, 0.0, 1.0);
                v = std::clamp(v, 0.0, 1.0);
                w = 0.0;
                ++set.clamp_warnings;
            }
            inst.keypoints.coords.push_back({u, v});
            inst.keypoints.weight.push_back(w);
        }
        set.instances.push_back(std::move(inst));
    }
    return set;
}

void export_annotations(const AnnotationSet& set, const std::string& path,
                        const std::array<double, 4>& bbox) {
    json doc;
    doc["categories"] = json::array();
    for (const AnnotationCategory& c : set.categories) {
        json cat;
        cat["id"] = c.id;
        cat["name"] = c.name;
        cat["keypoints"] = c.keypoint_names;
        json skeleton = json::array();
        for (const auto& [a, b] : c.links.edges()) skeleton.push_back({a + 1, b + 1});
        cat["skeleton"] = skeleton;
        doc["categories"].push_back(std::move(cat));
    }
    doc["annotations"] = json::array();
    for (const AnnotationInstance& inst : set.instances) {
        json ann;
        ann["category_id"] = inst.category_id;
        ann["image_id"] = inst.image_id;
        ann["bbox"] = bbox;
        json kps = json::array();
        for (int i = 0; i < inst.keypoints.size(); ++i) {
            kps.push_back(bbox[0] + inst.keypoints.coords[static_cast<std::size_t>(i)][0] * bbox[2]);
            kps.push_back(bbox[1] + inst.keypoints.coords[static_cast<std::size_t>(i)][1] * bbox[3]);
            kps.push_back(inst.keypoints.weight[static_cast<std::size_t>(i)] > 0.0 ? 2 : 0);
        }
        ann["keypoints"] = std::move(kps);
        doc["annotations"].push_back(std::move(ann));
    }
    std::ofstream out(path);
    if (!out) throw ContractError("annotations: cannot write " + path);
    out << doc.dump(2) << "\n";
}

}  // namespace posemine
