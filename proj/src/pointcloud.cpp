#include "lidarcount/pointcloud.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_set>

namespace lidarcount {

using json = nlohmann::json;

namespace {

constexpr std::string_view kCsvHeader = "frame_id,timestamp,x,y,z";

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    return s;
}

[[noreturn]] void fail_at(std::size_t line_no, const std::string& what) {
    throw DataError("line " + std::to_string(line_no) + ": " + what);
}

template <typename T>
T parse_number(std::string_view field, std::size_t line_no) {
    field = trim(field);
    T value{};
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc() || ptr != field.data() + field.size())
        fail_at(line_no, "cannot parse number '" + std::string(field) + "'");
    return value;
}

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

std::vector<Frame> parse_csv(std::istream& in) {
    std::vector<Frame> frames;
    std::vector<std::vector<Point3>> buffers;
    std::unordered_set<std::int64_t> seen;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        auto view = trim(line);
        if (view.empty()) continue;
        // The header is optional, but only as the first record.
        if (!header_seen) {
            header_seen = true;
            if (view == kCsvHeader) continue;
        }
        auto fields = split_commas(view);
        if (fields.size() != 5) fail_at(line_no, "expected 5 fields, got " + std::to_string(fields.size()));
        auto id = parse_number<std::int64_t>(fields[0], line_no);
        auto ts = parse_number<double>(fields[1], line_no);
        Point3 p(parse_number<double>(fields[2], line_no), parse_number<double>(fields[3], line_no),
                 parse_number<double>(fields[4], line_no));
        if (!p.allFinite()) fail_at(line_no, "non-finite coordinate");
        if (frames.empty() || frames.back().frame_id != id) {
            if (!seen.insert(id).second)
                fail_at(line_no, "frame_id " + std::to_string(id) + " is not contiguous");
            frames.push_back(Frame{id, ts, PointMatrix(0, 3)});
            buffers.emplace_back();
        }
        buffers.back().push_back(p);
    }
    for (std::size_t i = 0; i < frames.size(); ++i) frames[i].points = stack_points(buffers[i]);
    return frames;
}

}  // namespace

bool Frame::operator==(const Frame& other) const {
    return frame_id == other.frame_id && timestamp == other.timestamp && points.rows() == other.points.rows() &&
           points == other.points;
}

void RoiConfig::validate() const {
    if (!(x_min < x_max)) throw UsageError("roi: x_min must be < x_max");
    if (!(y_min < y_max)) throw UsageError("roi: y_min must be < y_max");
    if (!std::isfinite(z_min)) throw UsageError("roi: z_min must be finite");
}

FrameFormat parse_frame_format(std::string_view name) {
    if (name == "csv") return FrameFormat::Csv;
    if (name == "ndjson") return FrameFormat::Ndjson;
    throw UsageError("unknown frame format '" + std::string(name) + "' (expected csv or ndjson)");
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) throw std::runtime_error("format_double: conversion failed");
    return std::string(buf, ptr);
}

std::string frame_to_ndjson(const Frame& frame) {
    json pts = json::array();
    for (Eigen::Index i = 0; i < frame.points.rows(); ++i)
        pts.push_back({frame.points(i, 0), frame.points(i, 1), frame.points(i, 2)});
    json j = {{"frame_id", frame.frame_id}, {"timestamp", frame.timestamp}, {"points", std::move(pts)}};
    return j.dump();
}

Frame frame_from_ndjson(std::string_view line, std::size_t line_no) {
    json j = json::parse(line.begin(), line.end(), nullptr, false);
    if (j.is_discarded() || !j.is_object()) fail_at(line_no, "invalid JSON object");
    try {
        Frame f;
        f.frame_id = j.at("frame_id").get<std::int64_t>();
        f.timestamp = j.at("timestamp").get<double>();
        const auto& pts = j.at("points");
        if (!pts.is_array()) fail_at(line_no, "'points' must be an array");
        f.points.resize(static_cast<Eigen::Index>(pts.size()), 3);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const auto& p = pts[i];
            if (!p.is_array() || p.size() != 3) fail_at(line_no, "point " + std::to_string(i) + " must be [x,y,z]");
            for (int c = 0; c < 3; ++c) f.points(static_cast<Eigen::Index>(i), c) = p[c].get<double>();
        }
        if (!f.points.allFinite()) fail_at(line_no, "non-finite coordinate");
        return f;
    } catch (const json::exception& e) {
        fail_at(line_no, e.what());
    }
}

std::optional<Frame> NdjsonFrameReader::next() {
    std::string line;
    while (std::getline(in_, line)) {
        ++line_no_;
        auto view = trim(line);
        if (view.empty()) continue;
        return frame_from_ndjson(view, line_no_);
    }
    return std::nullopt;
}

std::vector<Frame> parse_frames(std::istream& in, FrameFormat format) {
    if (format == FrameFormat::Csv) return parse_csv(in);
    std::vector<Frame> frames;
    NdjsonFrameReader reader(in);
    while (auto f = reader.next()) frames.push_back(std::move(*f));
    return frames;
}

std::vector<Frame> parse_frames(std::string_view text, FrameFormat format) {
    std::istringstream in{std::string(text)};
    return parse_frames(in, format);
}

void write_frames(std::ostream& out, const std::vector<Frame>& frames, FrameFormat format) {
    if (format == FrameFormat::Ndjson) {
        for (const auto& f : frames) out << frame_to_ndjson(f) << '\n';
    } else {
        out << kCsvHeader << '\n';
        for (const auto& f : frames) {
            const auto id = std::to_string(f.frame_id);
            const auto ts = format_double(f.timestamp);
            for (Eigen::Index i = 0; i < f.points.rows(); ++i)
                out << id << ',' << ts << ',' << format_double(f.points(i, 0)) << ','
                    << format_double(f.points(i, 1)) << ',' << format_double(f.points(i, 2)) << '\n';
        }
    }
    if (!out) throw DataError("write_frames: output stream failure");
}

std::string write_frames(const std::vector<Frame>& frames, FrameFormat format) {
    std::ostringstream out;
    write_frames(out, frames, format);
    return out.str();
}

Frame remove_ground(const Frame& frame, double z_min) {
    return Frame{frame.frame_id, frame.timestamp,
                 filter_rows(frame.points, [z_min](const auto& p) { return p(2) >= z_min; })};
}

Frame apply_roi(const Frame& frame, const RoiConfig& roi) {
    return Frame{frame.frame_id, frame.timestamp, filter_rows(frame.points, [&roi](const auto& p) {
                     return p(0) >= roi.x_min && p(0) <= roi.x_max && p(1) >= roi.y_min && p(1) <= roi.y_max &&
                            p(2) >= roi.z_min;
                 })};
}

}  // namespace lidarcount
