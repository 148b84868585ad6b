#include "flatbill/config_io.hpp"

#include <set>

#include "flatbill/error.hpp"

namespace flatbill {

namespace {

const std::set<std::string>& table_keys() {
    static const std::set<std::string> keys = {
        "beta",     "scatterer_radius", "rect_width",       "rect_height", "epsilon0",
        "k0",       "mode",             "newton_tol",       "max_flight_cells", "seed"};
    return keys;
}

template <class T>
T get_as(const nlohmann::json& j, const char* key) {
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::InvalidConfig, std::string("bad value for '") + key + "': " + e.what());
    }
}

}  // namespace

TableConfig table_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, "config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!table_keys().count(it.key()))
            throw Error(ErrorKind::InvalidConfig, "unknown key '" + it.key() + "'");
    }
    TableConfig c;
    if (j.contains("beta")) c.beta = get_as<double>(j, "beta");
    if (j.contains("scatterer_radius")) c.scatterer_radius = get_as<double>(j, "scatterer_radius");
    if (j.contains("rect_width")) c.rect_width = get_as<double>(j, "rect_width");
    if (j.contains("rect_height")) c.rect_height = get_as<double>(j, "rect_height");
    if (j.contains("epsilon0")) c.epsilon0 = get_as<double>(j, "epsilon0");
    if (j.contains("k0")) c.k0 = get_as<int>(j, "k0");
    if (j.contains("mode")) c.mode = mode_from_string(get_as<std::string>(j, "mode"));
    if (j.contains("newton_tol")) c.newton_tol = get_as<double>(j, "newton_tol");
    if (j.contains("max_flight_cells")) c.max_flight_cells = get_as<std::int64_t>(j, "max_flight_cells");
    if (j.contains("seed")) c.seed = get_as<std::uint64_t>(j, "seed");
    c.validate();
    return c;
}

nlohmann::json table_config_to_json(const TableConfig& c) {
    return nlohmann::json{{"beta", c.beta},
                          {"scatterer_radius", c.scatterer_radius},
                          {"rect_width", c.rect_width},
                          {"rect_height", c.rect_height},
                          {"epsilon0", c.epsilon0},
                          {"k0", c.k0},
                          {"mode", to_string(c.mode)},
                          {"newton_tol", c.newton_tol},
                          {"max_flight_cells", c.max_flight_cells},
                          {"seed", c.seed}};
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw Error(ErrorKind::InvalidConfig, "override must look like key=value: '" + assignment + "'");
    const std::string key = assignment.substr(0, eq);
    const std::string val = assignment.substr(eq + 1);
    nlohmann::json v;
    try {
        v = nlohmann::json::parse(val);
    } catch (const nlohmann::json::parse_error&) {
        v = val;
    }
    // Dotted keys address nested objects ("params.samples=100").
    nlohmann::json* node = &j;
    std::size_t start = 0;
    for (;;) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (dot == std::string::npos) {
            (*node)[part] = v;
            break;
        }
        node = &(*node)[part];
        start = dot + 1;
    }
}

}  // namespace flatbill
