#pragma once

#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "sof/error.hpp"

namespace sof::cloudhub {

/// 0 = UNKNOWN, 1 = GUEST, 2 = RESIDENT, 3 = OWNER.
enum class Level : int { Unknown = 0, Guest = 1, Resident = 2, Owner = 3 };

inline constexpr int kOwnerLevel = static_cast<int>(Level::Owner);

inline std::string level_name(int level) {
  switch (level) {
    case 0: return "UNKNOWN";
    case 1: return "GUEST";
    case 2: return "RESIDENT";
    case 3: return "OWNER";
    default: return "INVALID";
  }
}

inline void check_level(int level) {
  if (level < 0 || level > kOwnerLevel) fail(ErrorCode::InvalidArgument, "permission level must be in 0..3");
}

struct DeviceRule {
  std::string name;
  int min_level = 0;
  bool restricted = false;
  bool operator==(const DeviceRule&) const = default;
};

enum class AccessVerdict { Grant, Deny };

/// Restricted devices are reserved for owners regardless of min_level.
inline AccessVerdict evaluate_rule(int person_level, const DeviceRule& rule) {
  const bool ok = person_level >= rule.min_level && !(rule.restricted && person_level < kOwnerLevel);
  return ok ? AccessVerdict::Grant : AccessVerdict::Deny;
}

struct AccessPolicy {
  std::map<std::string, DeviceRule> devices;
  std::map<std::string, int> persons;

  /// Persons missing from the table are level 0.
  [[nodiscard]] int level_of(const std::optional<std::string>& person) const {
    if (!person) return 0;
    auto it = persons.find(*person);
    return it == persons.end() ? 0 : it->second;
  }

  void validate() const {
    for (const auto& [id, d] : devices) check_level(d.min_level);
    for (const auto& [id, l] : persons) check_level(l);
  }

  bool operator==(const AccessPolicy&) const = default;
};

/// `person` nullopt means UNKNOWN.
inline AccessVerdict check_access(const std::optional<std::string>& person, const std::string& device_id,
                                  const AccessPolicy& policy) {
  auto it = policy.devices.find(device_id);
  if (it == policy.devices.end()) fail(ErrorCode::UnknownDevice, device_id);
  return evaluate_rule(policy.level_of(person), it->second);
}

inline nlohmann::json devices_to_json(const std::map<std::string, DeviceRule>& devices) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [id, d] : devices) {
    out[id] = {{"name", d.name}, {"min_level", d.min_level}, {"restricted", d.restricted}};
  }
  return out;
}

inline std::map<std::string, DeviceRule> devices_from_json(const nlohmann::json& j) {
  std::map<std::string, DeviceRule> out;
  for (const auto& [id, d] : j.items()) {
    out[id] = {d.value("name", id), d.at("min_level").get<int>(), d.value("restricted", false)};
  }
  return out;
}

inline nlohmann::json to_json(const AccessPolicy& p) {
  nlohmann::json persons = nlohmann::json::object();
  for (const auto& [id, l] : p.persons) persons[id] = l;
  return {{"devices", devices_to_json(p.devices)}, {"persons", persons}};
}

inline AccessPolicy policy_from_json(const nlohmann::json& j) {
  AccessPolicy p;
  try {
    p.devices = devices_from_json(j.at("devices"));
    for (const auto& [id, l] : j.at("persons").items()) p.persons[id] = l.get<int>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("policy: ") + e.what());
  }
  p.validate();
  return p;
}

/// Devices of the demonstration home.
inline AccessPolicy default_policy() {
  AccessPolicy p;
  p.devices["front_door"] = {"Front door", 1, false};
  p.devices["bedroom_door"] = {"Bedroom door", 2, false};
  p.devices["stove"] = {"Stove", 1, true};
  p.devices["television"] = {"Television", 1, true};
  p.devices["lights"] = {"Lights", 1, false};
  return p;
}

}  // namespace sof::cloudhub
