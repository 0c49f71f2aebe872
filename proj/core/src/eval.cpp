#include "acar/eval.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace acar::eval {

double iou(const DetectionBox& a, const DetectionBox& b) {
    const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = ix * iy;
    const double uni = box_area(a) + box_area(b) - inter;
    return uni <= 0.0 ? 0.0 : inter / uni;
}

double average_precision(std::vector<ScoredDetection> dets,
                         const std::map<FrameKey, std::vector<DetectionBox>>& gts_by_frame, double iou_thresh,
                         ClassCounts* counts) {
    std::size_t total_gt = 0;
    for (const auto& [key, boxes] : gts_by_frame) total_gt += boxes.size();
    if (counts) *counts = ClassCounts{0, 0, total_gt};
    if (total_gt == 0) return -1.0;  // AP undefined without ground truth

    std::stable_sort(dets.begin(), dets.end(),
                     [](const ScoredDetection& a, const ScoredDetection& b) { return a.score > b.score; });

    std::map<FrameKey, std::vector<bool>> matched;
    for (const auto& [key, boxes] : gts_by_frame) matched[key].assign(boxes.size(), false);

    std::vector<char> is_tp(dets.size(), 0);
    for (std::size_t di = 0; di < dets.size(); ++di) {
        const auto key = frame_key(dets[di].box.video_id, dets[di].box.timestamp);
        auto git = gts_by_frame.find(key);
        if (git == gts_by_frame.end()) continue;
        auto& used = matched[key];
        double best = -1.0;
        std::ptrdiff_t best_g = -1;
        for (std::size_t gi = 0; gi < git->second.size(); ++gi) {
            if (used[gi]) continue;
            const double v = iou(dets[di].box, git->second[gi]);
            if (v > best) {  // strict: equal IoU keeps the lower GT index
                best = v;
                best_g = static_cast<std::ptrdiff_t>(gi);
            }
        }
        if (best_g >= 0 && best >= iou_thresh) {
            used[static_cast<std::size_t>(best_g)] = true;
            is_tp[di] = 1;
        }
    }

    std::size_t tp = 0;
    std::vector<double> precision(dets.size()), recall(dets.size());
    for (std::size_t di = 0; di < dets.size(); ++di) {
        tp += is_tp[di];
        precision[di] = static_cast<double>(tp) / static_cast<double>(di + 1);
        recall[di] = static_cast<double>(tp) / static_cast<double>(total_gt);
    }
    if (counts) {
        counts->tp = tp;
        counts->fp = dets.size() - tp;
    }

    // precision envelope from the right, integrated over recall steps
    double ap = 0.0, prev_recall = 0.0, env = 0.0;
    std::vector<double> envelope(dets.size());
    for (std::size_t i = dets.size(); i-- > 0;) {
        env = std::max(env, precision[i]);
        envelope[i] = env;
    }
    for (std::size_t i = 0; i < dets.size(); ++i) {
        ap += (recall[i] - prev_recall) * envelope[i];
        prev_recall = recall[i];
    }
    return ap;
}

double mean_ap(const std::map<int, double>& per_class_ap) {
    if (per_class_ap.empty()) throw std::invalid_argument("mean_ap: no class has ground truth");
    double sum = 0.0;
    for (const auto& [cls, ap] : per_class_ap) sum += ap;
    return sum / static_cast<double>(per_class_ap.size());
}

EvalReport evaluate(const std::vector<ScoredDetection>& dets, const std::vector<GroundTruth>& gts,
                    std::size_t num_classes, double iou_thresh) {
    EvalReport report;
    for (std::size_t cls = 0; cls < num_classes; ++cls) {
        std::vector<ScoredDetection> cls_dets;
        for (const auto& d : dets)
            if (d.class_id == static_cast<int>(cls)) cls_dets.push_back(d);
        std::map<FrameKey, std::vector<DetectionBox>> cls_gt;
        for (const auto& g : gts) {
            if (cls < g.labels.size() && g.labels[cls])
                cls_gt[frame_key(g.box.video_id, g.box.timestamp)].push_back(g.box);
        }
        ClassCounts counts;
        const double ap = average_precision(cls_dets, cls_gt, iou_thresh, &counts);
        report.counts[static_cast<int>(cls)] = counts;
        if (ap >= 0.0) report.per_class_ap[static_cast<int>(cls)] = ap;
    }
    report.map_value = mean_ap(report.per_class_ap);
    return report;
}

ScoreMatrix merge_multiscale_flip(const std::vector<ScoreMatrix>& score_sets) {
    if (score_sets.empty()) throw std::invalid_argument("merge: no score sets");
    const std::size_t actors = score_sets[0].size();
    for (const auto& s : score_sets)
        if (s.size() != actors)
            throw std::invalid_argument("merge: score sets disagree on actor count (" + std::to_string(s.size()) +
                                        " vs " + std::to_string(actors) + ")");
    ScoreMatrix out(actors);
    for (std::size_t a = 0; a < actors; ++a) {
        const std::size_t k = score_sets[0][a].size();
        out[a].assign(k, 0.0);
        for (const auto& s : score_sets) {
            if (s[a].size() != k) throw std::invalid_argument("merge: score sets disagree on class count");
            for (std::size_t c = 0; c < k; ++c) out[a][c] += s[a][c];
        }
        for (std::size_t c = 0; c < k; ++c) out[a][c] /= static_cast<double>(score_sets.size());
    }
    return out;
}

std::vector<double> ensemble_scores(const std::vector<double>& model_aps,
                                    const std::vector<std::vector<double>>& model_scores) {
    if (model_scores.empty()) throw std::invalid_argument("ensemble: empty model list");
    if (model_aps.size() != model_scores.size())
        throw std::invalid_argument("ensemble: AP count does not match model count");
    const std::size_t n = model_scores[0].size();
    for (const auto& s : model_scores)
        if (s.size() != n) throw std::invalid_argument("ensemble: models scored different detection sets");

    double total_w = 0.0;
    for (double ap : model_aps) {
        if (ap < 0.0 || ap > 1.0) throw std::invalid_argument("ensemble: AP out of [0,1]");
        total_w += ap;
    }
    std::vector<double> weights = model_aps;
    if (total_w == 0.0) {
        weights.assign(model_aps.size(), 1.0);
        total_w = static_cast<double>(model_aps.size());
    }
    std::vector<double> out(n, 0.0);
    for (std::size_t m = 0; m < model_scores.size(); ++m)
        for (std::size_t i = 0; i < n; ++i) out[i] += weights[m] * model_scores[m][i];
    for (double& v : out) v /= total_w;
    return out;
}

std::vector<DetectionBox> threshold_detections(const std::vector<DetectionBox>& dets, DetectionSource source,
                                               double ava_threshold, double kinetics_threshold) {
    const double thr = source == DetectionSource::AvaLike ? ava_threshold : kinetics_threshold;
    std::vector<DetectionBox> out;
    for (const auto& d : dets)
        if (d.score >= thr) out.push_back(d);
    return out;
}

// --- csv ------------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view field, const std::string& path, std::size_t line_no) {
    double v{};
    auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc() || res.ptr != field.data() + field.size())
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed number '" +
                                 std::string(field) + "'");
    return v;
}

std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

DetectionBox parse_box_fields(const std::vector<std::string_view>& f, const std::string& path, std::size_t line_no) {
    DetectionBox b;
    b.video_id = std::string(f[0]);
    b.timestamp = parse_double(f[1], path, line_no);
    b.x1 = parse_double(f[2], path, line_no);
    b.y1 = parse_double(f[3], path, line_no);
    b.x2 = parse_double(f[4], path, line_no);
    b.y2 = parse_double(f[5], path, line_no);
    if (b.x1 >= b.x2 || b.y1 >= b.y2)
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": degenerate box (x1,y1)>=(x2,y2)");
    return b;
}

void check_score(double s, const std::string& path, std::size_t line_no) {
    if (s < 0.0 || s > 1.0)
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": score " + fmt_double(s) +
                                 " out of [0,1]");
}

}  // namespace

void write_results_csv(const std::string& path, std::vector<ScoredDetection> dets) {
    std::stable_sort(dets.begin(), dets.end(), [](const ScoredDetection& a, const ScoredDetection& b) {
        if (a.box.video_id != b.box.video_id) return a.box.video_id < b.box.video_id;
        if (a.box.timestamp != b.box.timestamp) return a.box.timestamp < b.box.timestamp;
        if (a.class_id != b.class_id) return a.class_id < b.class_id;
        return a.score > b.score;
    });
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& d : dets) {
        out << d.box.video_id << ',' << fmt_double(d.box.timestamp) << ',' << fmt_double(d.box.x1) << ','
            << fmt_double(d.box.y1) << ',' << fmt_double(d.box.x2) << ',' << fmt_double(d.box.y2) << ','
            << d.class_id << ',' << fmt_double(d.score) << '\n';
    }
}

std::vector<ScoredDetection> read_results_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::vector<ScoredDetection> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != 8)
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected 8 fields, got " +
                                     std::to_string(f.size()));
        ScoredDetection d;
        d.box = parse_box_fields(f, path, line_no);
        d.class_id = static_cast<int>(parse_double(f[6], path, line_no));
        d.score = parse_double(f[7], path, line_no);
        check_score(d.score, path, line_no);
        out.push_back(std::move(d));
    }
    return out;
}

void write_detections_csv(const std::string& path, std::vector<DetectionBox> dets) {
    std::stable_sort(dets.begin(), dets.end(), [](const DetectionBox& a, const DetectionBox& b) {
        if (a.video_id != b.video_id) return a.video_id < b.video_id;
        if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
        return a.score > b.score;
    });
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& d : dets) {
        out << d.video_id << ',' << fmt_double(d.timestamp) << ',' << fmt_double(d.x1) << ',' << fmt_double(d.y1)
            << ',' << fmt_double(d.x2) << ',' << fmt_double(d.y2) << ',' << fmt_double(d.score) << '\n';
    }
}

std::vector<DetectionBox> read_detections_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::vector<DetectionBox> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != 7)
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected 7 fields, got " +
                                     std::to_string(f.size()));
        DetectionBox b = parse_box_fields(f, path, line_no);
        b.score = parse_double(f[6], path, line_no);
        check_score(b.score, path, line_no);
        out.push_back(std::move(b));
    }
    return out;
}

// --- json -------------------------------------------------------------------

std::string report_to_json(const EvalReport& report, const std::vector<std::string>& class_names) {
    nlohmann::json j;
    j["map"] = report.map_value;
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& [cls, counts] : report.counts) {
        nlohmann::json c;
        c["class_id"] = cls;
        if (cls >= 0 && static_cast<std::size_t>(cls) < class_names.size()) c["name"] = class_names[cls];
        const auto it = report.per_class_ap.find(cls);
        if (it != report.per_class_ap.end())
            c["ap"] = it->second;
        else
            c["ap"] = nullptr;
        c["tp"] = counts.tp;
        c["fp"] = counts.fp;
        c["gt"] = counts.gt;
        classes.push_back(std::move(c));
    }
    j["classes"] = std::move(classes);
    return j.dump(2);
}

EvalReport report_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    EvalReport r;
    r.map_value = j.at("map").get<double>();
    for (const auto& c : j.at("classes")) {
        const int cls = c.at("class_id").get<int>();
        if (!c.at("ap").is_null()) r.per_class_ap[cls] = c.at("ap").get<double>();
        ClassCounts counts;
        counts.tp = c.at("tp").get<std::size_t>();
        counts.fp = c.at("fp").get<std::size_t>();
        counts.gt = c.at("gt").get<std::size_t>();
        r.counts[cls] = counts;
    }
    return r;
}

std::string report_to_table(const EvalReport& report, const std::vector<std::string>& class_names) {
    std::ostringstream out;
    out << "class                       AP       TP     FP     GT\n";
    for (const auto& [cls, counts] : report.counts) {
        std::string name = cls >= 0 && static_cast<std::size_t>(cls) < class_names.size()
                               ? class_names[cls]
                               : "class_" + std::to_string(cls);
        name.resize(24, ' ');
        out << name << "  ";
        const auto it = report.per_class_ap.find(cls);
        char buf[32];
        if (it != report.per_class_ap.end())
            std::snprintf(buf, sizeof(buf), "%8.4f", it->second);
        else
            std::snprintf(buf, sizeof(buf), "%8s", "-");
        out << buf;
        std::snprintf(buf, sizeof(buf), "  %5zu  %5zu  %5zu", counts.tp, counts.fp, counts.gt);
        out << buf << '\n';
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "mAP@0.5: %.6f", report.map_value);
    out << buf << '\n';
    return out.str();
}

}  // namespace acar::eval
