#include "racestack/params.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace racestack::params {

namespace {

using json = nlohmann::json;

bool valid_name(std::string_view name) {
  if (name.empty()) return false;
  std::size_t start = 0;
  while (true) {
    auto dot = name.find('.', start);
    auto seg = name.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start);
    if (seg.empty()) return false;
    for (char c : seg) {
      if (c == ' ' || c == '\t' || c == '\n') return false;
    }
    if (dot == std::string_view::npos) return true;
    start = dot + 1;
  }
}

bool finite(const ParameterValue& v) {
  if (auto d = std::get_if<double>(&v)) return std::isfinite(*d);
  if (auto a = std::get_if<std::vector<double>>(&v))
    return std::all_of(a->begin(), a->end(), [](double x) { return std::isfinite(x); });
  return true;
}

template <class T>
std::optional<std::vector<T>> array_of(const json& j, bool (json::*is)() const noexcept) {
  std::vector<T> out;
  for (const auto& e : j) {
    if (!(e.*is)()) return std::nullopt;
    out.push_back(e.get<T>());
  }
  return out;
}

// Converts a JSON value to the declared type, or nullopt if the JSON kind does not match.
std::optional<ParameterValue> convert(const json& j, ParamType declared) {
  switch (declared) {
    case ParamType::Bool:
      if (j.is_boolean()) return ParameterValue{j.get<bool>()};
      break;
    case ParamType::Int:
      if (j.is_number_integer()) {
        if (j.is_number_unsigned() && j.get<std::uint64_t>() > static_cast<std::uint64_t>(INT64_MAX)) break;
        return ParameterValue{j.get<std::int64_t>()};
      }
      break;
    case ParamType::Float:
      if (j.is_number_float()) return ParameterValue{j.get<double>()};
      break;
    case ParamType::Text:
      if (j.is_string()) return ParameterValue{j.get<std::string>()};
      break;
    case ParamType::BoolArray:
      if (j.is_array())
        if (auto a = array_of<bool>(j, &json::is_boolean)) return ParameterValue{std::move(*a)};
      break;
    case ParamType::IntArray:
      if (j.is_array())
        if (auto a = array_of<std::int64_t>(j, &json::is_number_integer)) return ParameterValue{std::move(*a)};
      break;
    case ParamType::FloatArray:
      if (j.is_array())
        if (auto a = array_of<double>(j, &json::is_number_float)) return ParameterValue{std::move(*a)};
      break;
    case ParamType::TextArray:
      if (j.is_array())
        if (auto a = array_of<std::string>(j, &json::is_string)) return ParameterValue{std::move(*a)};
      break;
  }
  return std::nullopt;
}

json parse_flat_object(std::string_view doc) {
  json j;
  try {
    j = json::parse(doc);
  } catch (const json::parse_error& e) {
    throw ParamError(ParamErrc::ParseError, e.what());
  }
  if (!j.is_object()) throw ParamError(ParamErrc::ParseError, "override document must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (v.is_object()) throw ParamError(ParamErrc::ParseError, "nested object under '" + k + "'; use dotted keys");
  }
  return j;
}

}  // namespace

std::string_view to_string(ParamErrc c) {
  switch (c) {
    case ParamErrc::Redeclaration: return "Redeclaration";
    case ParamErrc::InvalidName: return "InvalidName";
    case ParamErrc::Undeclared: return "Undeclared";
    case ParamErrc::TypeMismatch: return "TypeMismatch";
    case ParamErrc::ReadOnly: return "ReadOnly";
    case ParamErrc::UnknownParameter: return "UnknownParameter";
    case ParamErrc::ParseError: return "ParseError";
    case ParamErrc::InvalidValue: return "InvalidValue";
  }
  return "?";
}

std::string_view to_string(ParamType t) {
  switch (t) {
    case ParamType::Bool: return "Bool";
    case ParamType::Int: return "Int";
    case ParamType::Float: return "Float";
    case ParamType::Text: return "Text";
    case ParamType::BoolArray: return "BoolArray";
    case ParamType::IntArray: return "IntArray";
    case ParamType::FloatArray: return "FloatArray";
    case ParamType::TextArray: return "TextArray";
  }
  return "?";
}

ParamError::ParamError(ParamErrc code, const std::string& what, std::vector<std::string> names)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), names_(std::move(names)) {}

const ParameterValue& ParameterSnapshot::get(std::string_view name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw ParamError(ParamErrc::Undeclared, std::string(name), {std::string(name)});
  return it->second;
}

void ParameterStore::declare(ParameterDescriptor desc) {
  if (!valid_name(desc.name)) throw ParamError(ParamErrc::InvalidName, "'" + desc.name + "'", {desc.name});
  if (entries_.contains(desc.name)) throw ParamError(ParamErrc::Redeclaration, desc.name, {desc.name});
  if (!finite(desc.default_value)) throw ParamError(ParamErrc::InvalidValue, desc.name + " default is not finite", {desc.name});
  auto name = desc.name;
  auto value = desc.default_value;
  entries_.emplace(std::move(name), Entry{std::move(desc), std::move(value)});
}

bool ParameterStore::declare_if_absent(ParameterDescriptor desc) {
  auto it = entries_.find(desc.name);
  if (it == entries_.end()) {
    declare(std::move(desc));
    return true;
  }
  if (type_of(it->second.value) != type_of(desc.default_value))
    throw ParamError(ParamErrc::Redeclaration, desc.name + " redeclared with a different type", {desc.name});
  return false;
}

bool ParameterStore::contains(std::string_view name) const { return entries_.find(name) != entries_.end(); }

ParameterStore::Entry& ParameterStore::entry(std::string_view name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ParamError(ParamErrc::Undeclared, std::string(name), {std::string(name)});
  return it->second;
}

const ParameterStore::Entry& ParameterStore::entry(std::string_view name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ParamError(ParamErrc::Undeclared, std::string(name), {std::string(name)});
  return it->second;
}

const ParameterValue& ParameterStore::get(std::string_view name) const { return entry(name).value; }

void ParameterStore::set(std::string_view name, ParameterValue value) {
  auto& e = entry(name);
  if (e.desc.read_only) throw ParamError(ParamErrc::ReadOnly, e.desc.name, {e.desc.name});
  if (type_of(value) != type_of(e.value)) {
    throw ParamError(ParamErrc::TypeMismatch,
                     e.desc.name + " is " + std::string(to_string(type_of(e.value))) + ", got " +
                         std::string(to_string(type_of(value))),
                     {e.desc.name});
  }
  if (!finite(value)) throw ParamError(ParamErrc::InvalidValue, e.desc.name + " must be finite", {e.desc.name});
  auto old = std::exchange(e.value, std::move(value));
  notify(e.desc.name, old, e.value);
}

std::size_t ParameterStore::apply_overrides(std::string_view json_document) {
  return apply_overrides(std::vector<std::string>{std::string(json_document)});
}

std::size_t ParameterStore::apply_overrides(const std::vector<std::string>& json_documents) {
  std::map<std::string, json> merged;
  for (const auto& doc : json_documents) {
    auto j = parse_flat_object(doc);
    for (auto& [k, v] : j.items()) merged[k] = v;
  }

  std::vector<std::string> unknown;
  for (const auto& [name, _] : merged) {
    if (!contains(name)) unknown.push_back(name);
  }
  if (!unknown.empty()) {
    std::string list;
    for (const auto& n : unknown) list += (list.empty() ? "" : ", ") + n;
    throw ParamError(ParamErrc::UnknownParameter, list, unknown);
  }

  // Overrides are launch-time configuration, so read_only parameters accept them.
  std::vector<std::pair<std::string, ParameterValue>> staged;
  for (const auto& [name, j] : merged) {
    const auto& e = entry(name);
    auto v = convert(j, type_of(e.value));
    if (!v) {
      throw ParamError(ParamErrc::TypeMismatch,
                       name + " is " + std::string(to_string(type_of(e.value))) + ", got " + j.dump(), {name});
    }
    staged.emplace_back(name, std::move(*v));
  }

  for (auto& [name, v] : staged) {
    auto& e = entry(name);
    auto old = std::exchange(e.value, std::move(v));
    notify(name, old, e.value);
  }
  return staged.size();
}

ChangeHandle ParameterStore::on_change(std::string_view name, ChangeCallback cb) {
  (void)entry(name);
  auto id = next_watcher_++;
  watchers_.push_back(Watcher{id, std::string(name), std::move(cb)});
  return ChangeHandle{id};
}

void ParameterStore::remove_on_change(ChangeHandle h) {
  std::erase_if(watchers_, [&](const Watcher& w) { return w.id == h.id; });
}

void ParameterStore::notify(const std::string& name, const ParameterValue& old_value,
                            const ParameterValue& new_value) {
  for (const auto& w : watchers_) {
    if (w.name == name) w.cb(old_value, new_value);
  }
}

ParameterSnapshot ParameterStore::snapshot() const {
  std::map<std::string, ParameterValue, std::less<>> values;
  for (const auto& [name, e] : entries_) values.emplace(name, e.value);
  return ParameterSnapshot(std::move(values));
}

std::vector<ParameterDescriptor> ParameterStore::descriptors() const {
  std::vector<ParameterDescriptor> out;
  for (const auto& [_, e] : entries_) out.push_back(e.desc);
  return out;
}

std::string ParameterView::qualified(std::string_view name) const {
  if (prefix_.empty()) return std::string(name);
  return prefix_ + "." + std::string(name);
}

}  // namespace racestack::params
