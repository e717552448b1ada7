#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <string>

namespace tidm {

struct LogEntry {
  std::string phase;
  std::uint64_t step = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
};

using LogSink = std::function<void(const LogEntry&)>;

/// Appends `phase step loss lr` lines to a plain-text file.
class MetricsLog {
 public:
  explicit MetricsLog(const std::string& path);
  void append(const LogEntry& entry);
  LogSink sink();

 private:
  std::ofstream out_;
};

}  // namespace tidm
