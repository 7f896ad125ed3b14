#include "fhnet/json_util.hpp"

#include <string_view>

namespace fhnet {

void reject_unknown_keys(const nlohmann::json& obj, std::initializer_list<const char*> allowed,
                         const std::string& context) {
  if (!obj.is_object()) throw ConfigError(context + ": expected a JSON object");
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* k : allowed)
      if (item.key() == std::string_view(k)) known = true;
    if (!known) throw ConfigError(context + ": unknown key '" + item.key() + "'");
  }
}

}  // namespace fhnet
