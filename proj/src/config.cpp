#include "candida/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace candida {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config: bad boolean for " + key + ": " + v);
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot read " + path);
    RunConfig c;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                        " is not key = value");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (val.size() >= 2 && val.front() == '"' && val.back() == '"')
            val = val.substr(1, val.size() - 2);
        if (key == "lr") c.lr = std::stod(val);
        else if (key == "epochs") c.epochs = std::stoi(val);
        else if (key == "batch_detect") c.batch_detect = std::stoi(val);
        else if (key == "batch_tile") c.batch_tile = std::stoi(val);
        else if (key == "batch_wsi") c.batch_wsi = std::stoi(val);
        else if (key == "alpha") c.alpha = std::stod(val);
        else if (key == "k") c.k = std::stoi(val);
        else if (key == "seed") c.seed = std::stoll(val);
        else if (key == "pt") c.pt = parse_bool(val, key);
        else if (key == "ssa") c.ssa = parse_bool(val, key);
        else if (key == "cl") c.cl = parse_bool(val, key);
        else if (key == "arch") c.arch = val;
        else if (key == "tile_size") c.tile_size = std::stoi(val);
        else if (key == "freeze_stages") c.freeze_stages = std::stoi(val);
        else if (key == "margin") c.margin = std::stod(val);
        else if (key == "mask_sigma") c.mask_sigma = std::stod(val);
        else if (key == "mask_s") c.mask_s = std::stod(val);
        else if (key == "literal_mask") c.literal_mask = parse_bool(val, key);
        else throw std::invalid_argument("config: unknown key " + key);
    }
    if (c.lr <= 0 || c.epochs < 0 || c.alpha < 0 || c.k < 1)
        throw std::invalid_argument("config: values out of range");
    return c;
}

std::string RunConfig::to_toml() const {
    std::ostringstream os;
    os << "lr = " << lr << "\n"
       << "epochs = " << epochs << "\n"
       << "batch_detect = " << batch_detect << "\n"
       << "batch_tile = " << batch_tile << "\n"
       << "batch_wsi = " << batch_wsi << "\n"
       << "alpha = " << alpha << "\n"
       << "k = " << k << "\n"
       << "seed = " << seed << "\n"
       << "pt = " << (pt ? "true" : "false") << "\n"
       << "ssa = " << (ssa ? "true" : "false") << "\n"
       << "cl = " << (cl ? "true" : "false") << "\n"
       << "arch = \"" << arch << "\"\n"
       << "tile_size = " << tile_size << "\n"
       << "freeze_stages = " << freeze_stages << "\n"
       << "margin = " << margin << "\n"
       << "mask_sigma = " << mask_sigma << "\n"
       << "mask_s = " << mask_s << "\n"
       << "literal_mask = " << (literal_mask ? "true" : "false") << "\n";
    return os.str();
}

}  // namespace candida
