#pragma once

namespace vpbench {

// Participates in every stage cache key: bump on changes that alter artifacts.
inline constexpr const char* kCodeVersion = "vpbench-0.1.0";
inline constexpr int kReportSchemaVersion = 1;

}  // namespace vpbench
