#pragma once

#include <filesystem>
#include <string>

#include "gvio/evaluation.hpp"
#include "gvio/simulator.hpp"

namespace gvio::io {

/// Parse/IO failures carrying the offending file and row.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Writes the dataset as a directory of CSV streams (header row, nanosecond
/// integer timestamps) plus meta.json with the rig, calibration truth and
/// frame truth. The layout mirrors EuRoC ASL closely enough that one reader
/// serves both.
void write_dataset(const sim::SimulatedDataset& ds, const std::filesystem::path& dir);

sim::SimulatedDataset read_dataset(const std::filesystem::path& dir);

/// TUM trajectory format: "t tx ty tz qx qy qz qw", one sample per line.
void write_tum(const TrajectoryEstimate& traj, const std::filesystem::path& file);
TrajectoryEstimate read_tum(const std::filesystem::path& file);

/// Converts a EuRoC ASL sequence (imu0/data.csv and
/// state_groundtruth_estimate0/data.csv, with or without the mav0/ root) into
/// the dataset layout, synthesizing GPS from ground truth positions plus
/// Gaussian noise. The visual stream is omitted.
void ingest_euroc(const std::filesystem::path& euroc_dir,
                  const std::filesystem::path& out_dir, double gps_sigma,
                  double gps_rate, std::uint64_t seed);

}  // namespace gvio::io
