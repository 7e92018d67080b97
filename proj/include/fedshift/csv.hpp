#pragma once

#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedshift {

// Minimal CSV emitter: comma separated, header row, '\n' line ends, UTF-8.
// Numeric cells use max_digits10 so written tables round-trip exactly.
class CsvWriter {
  public:
    explicit CsvWriter(std::ostream& out, std::vector<std::string> header) : out_(out) {
        cols_ = header.size();
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (i) out_ << ',';
            out_ << header[i];
        }
        out_ << '\n';
    }

    void row(const std::vector<std::string>& cells) {
        if (cells.size() != cols_) throw std::invalid_argument("csv row width mismatch");
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
    }

    static std::string num(double v) {
        std::ostringstream ss;
        ss.precision(17);
        ss << v;
        return ss.str();
    }
    static std::string num(long v) { return std::to_string(v); }
    static std::string num(int v) { return std::to_string(v); }

  private:
    std::ostream& out_;
    std::size_t cols_ = 0;
};

}  // namespace fedshift
