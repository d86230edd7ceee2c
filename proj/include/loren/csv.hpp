#pragma once

// CSV output: LF line endings, a '#' config comment line first, then the
// header row. Floats print with 17 significant digits so a rerun with the
// same config is byte-identical and values round-trip exactly.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace loren {

inline std::string csv_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path)
      : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot open output file: " + path);
  }

  void comment(const std::string& line) { out_ << "# " << line << "\n"; }

  void header(const std::vector<std::string>& cols) { row_strings(cols); }

  using Field = std::variant<std::string, double, long long, unsigned long long>;

  void row(const std::vector<Field>& fields) {
    bool first = true;
    for (const auto& f : fields) {
      if (!first) out_ << ',';
      first = false;
      if (std::holds_alternative<std::string>(f)) {
        out_ << std::get<std::string>(f);
      } else if (std::holds_alternative<double>(f)) {
        out_ << csv_double(std::get<double>(f));
      } else if (std::holds_alternative<long long>(f)) {
        out_ << std::get<long long>(f);
      } else {
        out_ << std::get<unsigned long long>(f);
      }
    }
    out_ << "\n";
  }

  void flush() { out_.flush(); }

 private:
  void row_strings(const std::vector<std::string>& cols) {
    bool first = true;
    for (const auto& c : cols) {
      if (!first) out_ << ',';
      first = false;
      out_ << c;
    }
    out_ << "\n";
  }

  std::ofstream out_;
};

}  // namespace loren
