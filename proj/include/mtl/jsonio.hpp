// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mtl {

/// Minimal JSON emitter with insertion-ordered keys and doubles printed at
/// 17 significant digits, so identical reports serialize byte-identically.
class JsonWriter {
 public:
  void begin_object() {
    comma();
    out_ += '{';
    stack_.push_back(false);
  }
  void end_object() {
    out_ += '}';
    stack_.pop_back();
    mark();
  }
  void begin_array() {
    comma();
    out_ += '[';
    stack_.push_back(false);
  }
  void end_array() {
    out_ += ']';
    stack_.pop_back();
    mark();
  }
  void key(std::string_view k) {
    comma();
    append_string(k);
    out_ += ':';
    pending_value_ = true;
  }
  void value(double v) {
    comma();
    out_ += format_double(v);
    mark();
  }
  void value(long long v) {
    comma();
    out_ += std::to_string(v);
    mark();
  }
  void value(int v) { value(static_cast<long long>(v)); }
  void value(unsigned long long v) {
    comma();
    out_ += std::to_string(v);
    mark();
  }
  void value(bool v) {
    comma();
    out_ += v ? "true" : "false";
    mark();
  }
  void value(std::string_view s) {
    comma();
    append_string(s);
    mark();
  }
  void raw(std::string_view json) {
    comma();
    out_ += json;
    mark();
  }

  const std::string& str() const { return out_; }

  static std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  }

 private:
  void comma() {
    if (pending_value_) {
      pending_value_ = false;
      return;
    }
    if (!stack_.empty() && stack_.back()) out_ += ',';
  }
  void mark() {
    if (!stack_.empty()) stack_.back() = true;
  }
  void append_string(std::string_view s) {
    out_ += '"';
    for (char c : s) {
      switch (c) {
        case '"': out_ += "\\\""; break;
        case '\\': out_ += "\\\\"; break;
        case '\n': out_ += "\\n"; break;
        case '\r': out_ += "\\r"; break;
        case '\t': out_ += "\\t"; break;
        default:
          if (static_cast<unsigned char>(c) < 0x20) {
            char buf[8];
            std::snprintf(buf, sizeof buf, "\\u%04x", c);
            out_ += buf;
          } else {
            out_ += c;
          }
      }
    }
    out_ += '"';
  }

  std::string out_;
  std::vector<bool> stack_;
  bool pending_value_ = false;
};

}  // namespace mtl
