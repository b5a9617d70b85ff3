#include "posemine/svg_viz.hpp"

#include <cstdio>
#include <sstream>

#include <json.hpp>

namespace posemine {

namespace {

constexpr int kCanvas = 512;
constexpr double kMargin = 24.0;

// Normalized [0,1] coordinates to canvas pixels, with a margin so glyphs at
// the border stay inside the viewport.
double px(double v) { return kMargin + v * (kCanvas - 2.0 * kMargin); }

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::string svg_open(const std::string& title) {
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << kCanvas
      << "\" height=\"" << kCanvas << "\" viewBox=\"0 0 " << kCanvas << " " << kCanvas << "\">\n"
      << "<title>" << title << "</title>\n"
      << "<rect width=\"" << kCanvas << "\" height=\"" << kCanvas
      << "\" fill=\"#10121a\"/>\n";
    return s.str();
}

void draw_links(std::ostringstream& s, const LinkMatrix& links, const KeypointSet& pts,
                const char* stroke) {
    for (const auto& [a, b] : links.edges())
        s << "<line class=\"link\" x1=\"" << num(px(pts.coords[static_cast<std::size_t>(a)][0]))
          << "\" y1=\"" << num(px(pts.coords[static_cast<std::size_t>(a)][1])) << "\" x2=\""
          << num(px(pts.coords[static_cast<std::size_t>(b)][0])) << "\" y2=\""
          << num(px(pts.coords[static_cast<std::size_t>(b)][1])) << "\" stroke=\"" << stroke
          << "\" stroke-width=\"1.5\"/>\n";
}

void draw_cross(std::ostringstream& s, double x, double y, double r, const char* stroke) {
    s << "<path class=\"refcross\" d=\"M " << num(x - r) << " " << num(y) << " L " << num(x + r)
      << " " << num(y) << " M " << num(x) << " " << num(y - r) << " L " << num(x) << " "
      << num(y + r) << "\" stroke=\"" << stroke << "\" stroke-width=\"2\"/>\n";
}

}  // namespace

std::string render_padding_svg(const Episode& ep) {
    if (ep.padded_supports.empty()) throw ContractError("render_padding_svg: no supports");
    const KeypointSet& padded = ep.padded_supports.front();
    std::ostringstream s;
    s << svg_open("keypoint padding");
    draw_links(s, ep.padded_links, padded, "#5a6078");
    for (int k = 0; k < padded.size(); ++k) {
        const double x = px(padded.coords[static_cast<std::size_t>(k)][0]);
        const double y = px(padded.coords[static_cast<std::size_t>(k)][1]);
        if (k < ep.raw_count)
            s << "<circle class=\"kp\" cx=\"" << num(x) << "\" cy=\"" << num(y)
              << "\" r=\"6\" fill=\"#62d0a4\"/>\n";
        else
            s << "<circle class=\"pad\" cx=\"" << num(x) << "\" cy=\"" << num(y)
              << "\" r=\"4.5\" fill=\"none\" stroke=\"#e8b44c\" stroke-width=\"2\"/>\n";
    }
    s << "</svg>\n";
    return s.str();
}

std::string render_attention_svg(const PoseModel& model, const Episode& ep, int layer) {
    if (layer < 0 || layer >= model.cfg.layers)
        throw ContractError("render_attention_svg: layer " + std::to_string(layer) +
                            " outside 0.." + std::to_string(model.cfg.layers - 1));
    ForwardOptions opts;
    opts.capture_debug = true;
    const ForwardTrace trace = model.run_episode(ep, opts);
    const FgsaDebug& dbg = trace.debug_q[static_cast<std::size_t>(layer)];

    nlohmann::json sums;
    std::ostringstream s;
    s << svg_open("deformable attention sampling");
    draw_links(s, ep.padded_links, ep.padded_query_gt, "#3c4258");
    for (const FgsaDebug::HeadTrace& h : dbg.heads) {
        double sum = 0.0;
        for (std::size_t i = 0; i < h.sample_locs.size(); ++i) {
            const double w = h.weights[i];
            sum += w;
            s << "<circle class=\"sample\" cx=\"" << num(px(h.sample_locs[i][0])) << "\" cy=\""
              << num(px(h.sample_locs[i][1])) << "\" r=\"3\" fill=\"#6fb7ff\" fill-opacity=\""
              << num(w) << "\"/>\n";
        }
        draw_cross(s, px(h.ref_point[0]), px(h.ref_point[1]), 5.0, "#ff5964");
        sums["k" + std::to_string(h.keypoint) + ".h" + std::to_string(h.head)] = sum;
    }
    nlohmann::json meta;
    meta["per_head_weight_sums"] = sums;
    s << "<metadata id=\"attention-weight-sums\">" << meta.dump() << "</metadata>\n";
    s << "</svg>\n";
    return s.str();
}

std::string render_prediction_svg(const PoseModel& model, const Episode& ep) {
    const ForwardTrace trace = model.run_episode(ep);
    const Tensor& p = trace.prediction();
    std::ostringstream s;
    s << svg_open("prediction vs ground truth");
    draw_links(s, ep.padded_links, ep.padded_query_gt, "#3c4258");
    for (int k = 0; k < ep.raw_count; ++k) {
        const double gx = px(ep.query.keypoints.coords[static_cast<std::size_t>(k)][0]);
        const double gy = px(ep.query.keypoints.coords[static_cast<std::size_t>(k)][1]);
        const double qx = px(p.at(static_cast<std::size_t>(2 * k)));
        const double qy = px(p.at(static_cast<std::size_t>(2 * k + 1)));
        s << "<line class=\"dev\" x1=\"" << num(gx) << "\" y1=\"" << num(gy) << "\" x2=\""
          << num(qx) << "\" y2=\"" << num(qy)
          << "\" stroke=\"#c0c6dd\" stroke-width=\"1\" stroke-dasharray=\"3 2\"/>\n";
        s << "<circle class=\"gt\" cx=\"" << num(gx) << "\" cy=\"" << num(gy)
          << "\" r=\"5\" fill=\"none\" stroke=\"#62d0a4\" stroke-width=\"2\"/>\n";
        s << "<circle class=\"pred\" cx=\"" << num(qx) << "\" cy=\"" << num(qy)
          << "\" r=\"3.5\" fill=\"#ff5964\"/>\n";
    }
    s << "</svg>\n";
    return s.str();
}

}  // namespace posemine
