#pragma once

#include "lidarcount/types.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lidarcount {

/// One LiDAR capture in sensor coordinates.
struct Frame {
    std::int64_t frame_id = 0;
    double timestamp = 0.0;
    PointMatrix points = PointMatrix(0, 3);

    Eigen::Index size() const { return points.rows(); }
    bool operator==(const Frame& other) const;
};

/// Axis-aligned region of interest. Bounds are inclusive.
struct RoiConfig {
    double x_min = 0.3;
    double x_max = 12.0;
    double y_min = -2.5;
    double y_max = 2.5;
    double z_min = -2.6;

    void validate() const;
};

enum class FrameFormat { Csv, Ndjson };

FrameFormat parse_frame_format(std::string_view name);

std::vector<Frame> parse_frames(std::istream& in, FrameFormat format);
std::vector<Frame> parse_frames(std::string_view text, FrameFormat format);

void write_frames(std::ostream& out, const std::vector<Frame>& frames, FrameFormat format);
std::string write_frames(const std::vector<Frame>& frames, FrameFormat format);

/// Streams NDJSON frames one line at a time.
class NdjsonFrameReader {
public:
    explicit NdjsonFrameReader(std::istream& in) : in_(in) {}
    std::optional<Frame> next();

private:
    std::istream& in_;
    std::size_t line_no_ = 0;
};

std::string frame_to_ndjson(const Frame& frame);
Frame frame_from_ndjson(std::string_view line, std::size_t line_no = 1);

// Filters

/// Keeps points with z >= z_min, preserving order.
Frame remove_ground(const Frame& frame, double z_min);

/// Keeps points inside the (inclusive) box, preserving order.
Frame apply_roi(const Frame& frame, const RoiConfig& roi);

/// Rows of `points` for which `keep(row)` holds, in order.
template <typename Pred>
PointMatrix filter_rows(const PointMatrix& points, Pred keep) {
    std::vector<Eigen::Index> idx;
    idx.reserve(static_cast<std::size_t>(points.rows()));
    for (Eigen::Index i = 0; i < points.rows(); ++i)
        if (keep(points.row(i))) idx.push_back(i);
    PointMatrix out(static_cast<Eigen::Index>(idx.size()), 3);
    for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = points.row(idx[k]);
    return out;
}

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

}  // namespace lidarcount
