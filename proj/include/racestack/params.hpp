#pragma once

// Typed runtime parameters with declare/get/set, change callbacks and strict,
// all-or-nothing validation of override documents (flat JSON, dotted keys).

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace racestack::params {

enum class ParamErrc { Redeclaration, InvalidName, Undeclared, TypeMismatch, ReadOnly, UnknownParameter, ParseError, InvalidValue };

std::string_view to_string(ParamErrc c);

class ParamError : public std::runtime_error {
 public:
  ParamError(ParamErrc code, const std::string& what, std::vector<std::string> names = {});
  ParamErrc code() const noexcept { return code_; }
  // Offending parameter names (all unmatched names for UnknownParameter).
  const std::vector<std::string>& names() const noexcept { return names_; }

 private:
  ParamErrc code_;
  std::vector<std::string> names_;
};

enum class ParamType { Bool, Int, Float, Text, BoolArray, IntArray, FloatArray, TextArray };

std::string_view to_string(ParamType t);

// Alternative order matches ParamType.
using ParameterValue = std::variant<bool, std::int64_t, double, std::string, std::vector<bool>,
                                    std::vector<std::int64_t>, std::vector<double>, std::vector<std::string>>;

inline ParamType type_of(const ParameterValue& v) { return static_cast<ParamType>(v.index()); }

struct ParameterDescriptor {
  std::string name;
  ParameterValue default_value;
  bool read_only = false;
  std::string description;
};

using ChangeCallback = std::function<void(const ParameterValue& old_value, const ParameterValue& new_value)>;

struct ChangeHandle {
  std::uint64_t id = 0;
};

// Immutable copy of every value; safe to hand to another thread.
class ParameterSnapshot {
 public:
  explicit ParameterSnapshot(std::map<std::string, ParameterValue, std::less<>> values)
      : values_(std::move(values)) {}
  const ParameterValue& get(std::string_view name) const;
  const std::map<std::string, ParameterValue, std::less<>>& values() const { return values_; }

 private:
  std::map<std::string, ParameterValue, std::less<>> values_;
};

class ParameterStore {
 public:
  void declare(ParameterDescriptor desc);
  // Declares unless the name exists with the same type; returns true if declared.
  // A type clash with an existing declaration is still a Redeclaration.
  bool declare_if_absent(ParameterDescriptor desc);
  bool contains(std::string_view name) const;

  const ParameterValue& get(std::string_view name) const;
  template <class T>
  const T& get_as(std::string_view name) const;
  double get_double(std::string_view name) const { return get_as<double>(name); }
  std::int64_t get_int(std::string_view name) const { return get_as<std::int64_t>(name); }
  bool get_bool(std::string_view name) const { return get_as<bool>(name); }
  const std::string& get_text(std::string_view name) const { return get_as<std::string>(name); }

  void set(std::string_view name, ParameterValue value);

  // Applies every entry or none. Returns the number of entries applied.
  std::size_t apply_overrides(std::string_view json_document);
  // Later documents win on key collisions; validation runs on the merged map.
  std::size_t apply_overrides(const std::vector<std::string>& json_documents);

  ChangeHandle on_change(std::string_view name, ChangeCallback cb);
  void remove_on_change(ChangeHandle h);

  ParameterSnapshot snapshot() const;
  std::vector<ParameterDescriptor> descriptors() const;

 private:
  struct Entry {
    ParameterDescriptor desc;
    ParameterValue value;
  };
  struct Watcher {
    std::uint64_t id;
    std::string name;
    ChangeCallback cb;
  };
  Entry& entry(std::string_view name);
  const Entry& entry(std::string_view name) const;
  void notify(const std::string& name, const ParameterValue& old_value, const ParameterValue& new_value);

  std::map<std::string, Entry, std::less<>> entries_;
  std::vector<Watcher> watchers_;
  std::uint64_t next_watcher_ = 1;
};

// Read-only access scoped to a name prefix ("control" + "kp" -> "control.kp").
class ParameterView {
 public:
  ParameterView(const ParameterStore& store, std::string prefix = {})
      : store_(&store), prefix_(std::move(prefix)) {}

  std::string qualified(std::string_view name) const;
  const ParameterValue& get(std::string_view name) const { return store_->get(qualified(name)); }
  double get_double(std::string_view name) const { return store_->get_double(qualified(name)); }
  std::int64_t get_int(std::string_view name) const { return store_->get_int(qualified(name)); }
  bool get_bool(std::string_view name) const { return store_->get_bool(qualified(name)); }
  const std::string& get_text(std::string_view name) const { return store_->get_text(qualified(name)); }
  const std::string& prefix() const { return prefix_; }

 private:
  const ParameterStore* store_;
  std::string prefix_;
};

template <class T>
const T& ParameterStore::get_as(std::string_view name) const {
  const auto& v = get(name);
  if (const T* p = std::get_if<T>(&v)) return *p;
  throw ParamError(ParamErrc::TypeMismatch, std::string(name) + " is " + std::string(to_string(type_of(v))),
                   {std::string(name)});
}

}  // namespace racestack::params
