#include "tidm/metrics_log.hpp"

#include <cstdio>

#include "tidm/error.hpp"

namespace tidm {

MetricsLog::MetricsLog(const std::string& path) : out_(path, std::ios::app) {
  if (!out_) throw RuntimeFailure("metrics log: cannot open " + path);
}

void MetricsLog::append(const LogEntry& entry) {
  char buf[128];
  std::snprintf(buf, sizeof buf, " %llu %.9g %.9g\n", static_cast<unsigned long long>(entry.step), entry.loss,
                entry.learning_rate);
  out_ << entry.phase << buf;
  out_.flush();
}

LogSink MetricsLog::sink() {
  return [this](const LogEntry& e) { append(e); };
}

}  // namespace tidm
