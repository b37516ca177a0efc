#include <fstream>
#include <iomanip>

#include <json.hpp>

#include "kgmo/harness.hpp"

namespace kgmo {

void write_snapshot(const std::string& stem, const Field& f, const std::string& name, double time) {
    const Grid& g = f.grid();
    nlohmann::json hdr;
    hdr["dim"] = g.dim();
    hdr["N"] = g.n();
    hdr["L"] = g.length();
    hdr["components"] = 1;
    hdr["time"] = time;
    hdr["name"] = name;
    hdr["complex"] = true;
    hdr["layout"] = "row-major float64, real plane then imaginary plane";
    std::ofstream jh(stem + ".json");
    if (!jh) throw ConfigError("cannot write snapshot header '" + stem + ".json'");
    jh << hdr.dump(2) << "\n";

    std::ofstream bin(stem + ".bin", std::ios::binary);
    if (!bin) throw ConfigError("cannot write snapshot '" + stem + ".bin'");
    std::vector<double> plane(f.size());
    for (std::size_t q = 0; q < f.size(); ++q) plane[q] = f[q].real();
    bin.write(reinterpret_cast<const char*>(plane.data()),
              static_cast<std::streamsize>(plane.size() * sizeof(double)));
    for (std::size_t q = 0; q < f.size(); ++q) plane[q] = f[q].imag();
    bin.write(reinterpret_cast<const char*>(plane.data()),
              static_cast<std::streamsize>(plane.size() * sizeof(double)));
}

Field read_snapshot(const std::string& stem, const Grid& expected) {
    std::ifstream jh(stem + ".json");
    if (!jh) throw ConfigError("cannot read snapshot header '" + stem + ".json'");
    nlohmann::json hdr = nlohmann::json::parse(jh);
    if (hdr.at("dim").get<int>() != expected.dim() || hdr.at("N").get<int>() != expected.n())
        throw ConfigError("snapshot '" + stem + "' does not match the configured grid");
    std::ifstream bin(stem + ".bin", std::ios::binary);
    if (!bin) throw ConfigError("cannot read snapshot '" + stem + ".bin'");
    Field f(expected);
    std::vector<double> plane(f.size());
    bin.read(reinterpret_cast<char*>(plane.data()),
             static_cast<std::streamsize>(plane.size() * sizeof(double)));
    for (std::size_t q = 0; q < f.size(); ++q) f[q] = plane[q];
    if (hdr.value("complex", false)) {
        bin.read(reinterpret_cast<char*>(plane.data()),
                 static_cast<std::streamsize>(plane.size() * sizeof(double)));
        for (std::size_t q = 0; q < f.size(); ++q) f[q] += cplx{0.0, plane[q]};
    }
    return f;
}

void write_ledger_csv(const std::string& path, const std::vector<LedgerRow>& rows) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write ledger '" + path + "'");
    out << "lambda,t,metric,value\n";
    out << std::setprecision(17);
    for (const auto& r : rows)
        out << r.lambda << "," << r.t << "," << r.metric << "," << r.value << "\n";
}

void write_summary_json(const std::string& path, const RunReport& rep) {
    nlohmann::json j;
    j["pass"] = rep.pass;
    j["first_failure"] = rep.first_failure;
    for (const auto& [k, v] : rep.scalars) j["scalars"][k] = v;
    for (const auto& [k, v] : rep.notes) j["notes"][k] = v;
    for (const auto& [name, m] : rep.sweeps) {
        nlohmann::json s;
        s["lambdas"] = m.lambdas;
        s["values"] = m.values;
        s["slope"] = m.fit.slope;
        s["intercept"] = m.fit.intercept;
        s["r2"] = m.fit.r2;
        s["expected"] = m.expected;
        s["window"] = m.window;
        s["checked"] = m.checked;
        s["pass"] = m.pass;
        j["sweeps"][name] = s;
    }
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write summary '" + path + "'");
    out << j.dump(2) << "\n";
}

} // namespace kgmo
