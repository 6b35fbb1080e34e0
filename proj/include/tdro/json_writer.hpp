#pragma once

// Minimal JSON writer used for every numeric artifact the tool emits.
// nlohmann/json handles all parsing; writing goes through this so floats are
// always serialized with 17 significant digits and object keys keep
// insertion order, giving byte-stable outputs.

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace tdro {

inline std::string format_double17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class JsonValue {
 public:
  using Array = std::vector<JsonValue>;
  using Object = std::vector<std::pair<std::string, JsonValue>>;

  JsonValue() : v_(nullptr) {}
  JsonValue(std::nullptr_t) : v_(nullptr) {}
  JsonValue(bool b) : v_(b) {}
  JsonValue(std::int64_t i) : v_(i) {}
  JsonValue(std::uint64_t u) : v_(static_cast<std::int64_t>(u)) {}
  JsonValue(int i) : v_(static_cast<std::int64_t>(i)) {}
  JsonValue(unsigned i) : v_(static_cast<std::int64_t>(i)) {}
  JsonValue(double d) : v_(d) {}
  JsonValue(const char* s) : v_(std::string(s)) {}
  JsonValue(std::string s) : v_(std::move(s)) {}
  JsonValue(Array a) : v_(std::move(a)) {}
  JsonValue(Object o) : v_(std::move(o)) {}

  static JsonValue array() { return JsonValue(Array{}); }
  static JsonValue object() { return JsonValue(Object{}); }

  void push_back(JsonValue v) { std::get<Array>(v_).push_back(std::move(v)); }
  void set(std::string key, JsonValue v) {
    std::get<Object>(v_).emplace_back(std::move(key), std::move(v));
  }

  std::string dump(int indent = -1) const {
    std::string out;
    write(out, indent, 0);
    if (indent >= 0) out.push_back('\n');
    return out;
  }

 private:
  std::variant<std::nullptr_t, bool, std::int64_t, double, std::string, Array, Object> v_;

  static void write_escaped(std::string& out, const std::string& s) {
    out.push_back('"');
    for (char c : s) {
      switch (c) {
        case '"': out += "\\\""; break;
        case '\\': out += "\\\\"; break;
        case '\n': out += "\\n"; break;
        case '\r': out += "\\r"; break;
        case '\t': out += "\\t"; break;
        default:
          if (static_cast<unsigned char>(c) < 0x20) {
            char buf[8];
            std::snprintf(buf, sizeof(buf), "\\u%04x", c);
            out += buf;
          } else {
            out.push_back(c);
          }
      }
    }
    out.push_back('"');
  }

  void write(std::string& out, int indent, int depth) const {
    const auto pad = [&](int d) {
      if (indent >= 0) {
        out.push_back('\n');
        out.append(static_cast<std::size_t>(indent) * d, ' ');
      }
    };
    if (std::holds_alternative<std::nullptr_t>(v_)) {
      out += "null";
    } else if (auto* b = std::get_if<bool>(&v_)) {
      out += *b ? "true" : "false";
    } else if (auto* i = std::get_if<std::int64_t>(&v_)) {
      char buf[24];
      std::snprintf(buf, sizeof(buf), "%" PRId64, *i);
      out += buf;
    } else if (auto* d = std::get_if<double>(&v_)) {
      out += format_double17(*d);
    } else if (auto* s = std::get_if<std::string>(&v_)) {
      write_escaped(out, *s);
    } else if (auto* a = std::get_if<Array>(&v_)) {
      out.push_back('[');
      for (std::size_t k = 0; k < a->size(); ++k) {
        if (k) out.push_back(',');
        pad(depth + 1);
        (*a)[k].write(out, indent, depth + 1);
      }
      if (!a->empty()) pad(depth);
      out.push_back(']');
    } else if (auto* o = std::get_if<Object>(&v_)) {
      out.push_back('{');
      for (std::size_t k = 0; k < o->size(); ++k) {
        if (k) out.push_back(',');
        pad(depth + 1);
        write_escaped(out, (*o)[k].first);
        out.push_back(':');
        if (indent >= 0) out.push_back(' ');
        (*o)[k].second.write(out, indent, depth + 1);
      }
      if (!o->empty()) pad(depth);
      out.push_back('}');
    }
  }
};

}  // namespace tdro
