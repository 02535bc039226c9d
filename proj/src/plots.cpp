#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "skelnoise/error.hpp"
#include "skelnoise/pipeline.hpp"

namespace skelnoise {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

void line_chart(const fs::path& file, const std::string& title, const std::string& x_label,
                const std::string& y_label, const std::vector<double>& x_ticks, const std::vector<Series>& series) {
  const double W = 640, H = 400, left = 60, right = 170, top = 40, bottom = 50;
  const double pw = W - left - right, ph = H - top - bottom;
  double x0 = *std::min_element(x_ticks.begin(), x_ticks.end());
  double x1 = *std::max_element(x_ticks.begin(), x_ticks.end());
  if (x1 == x0) {
    x0 -= 0.5;
    x1 += 0.5;
  }
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1.0 - y) * ph; };  // y axis fixed to [0, 1]

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title) << "</text>\n";
  for (int i = 0; i <= 5; ++i) {
    const double y = i / 5.0;
    svg << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << py(y) << "\" y2=\"" << py(y)
        << "\" stroke=\"#ddd\"/>\n";
    svg << "<text x=\"" << left - 6 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">" << num(y) << "</text>\n";
  }
  for (double x : x_ticks) {
    svg << "<line x1=\"" << px(x) << "\" x2=\"" << px(x) << "\" y1=\"" << top + ph << "\" y2=\"" << top + ph + 5
        << "\" stroke=\"black\"/>\n";
    svg << "<text class=\"xtick\" x=\"" << px(x) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
        << num(x) << "</text>\n";
  }
  svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">" << escape(x_label)
      << "</text>\n";
  svg << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(y_label) << "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* colour = kPalette[s % std::size(kPalette)];
    const Series& se = series[s];
    svg << "<polyline class=\"series\" data-name=\"" << escape(se.name) << "\" fill=\"none\" stroke=\"" << colour
        << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < se.x.size(); ++i) svg << (i ? " " : "") << px(se.x[i]) << ',' << py(se.y[i]);
    svg << "\"/>\n";
    for (std::size_t i = 0; i < se.x.size(); ++i)
      svg << "<circle cx=\"" << px(se.x[i]) << "\" cy=\"" << py(se.y[i]) << "\" r=\"3\" fill=\"" << colour << "\"/>\n";
    const double ly = top + 14 + 18 * static_cast<double>(s);
    svg << "<line x1=\"" << left + pw + 12 << "\" x2=\"" << left + pw + 32 << "\" y1=\"" << ly - 4 << "\" y2=\""
        << ly - 4 << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly << "\">" << escape(se.name) << "</text>\n";
  }
  svg << "</svg>\n";

  fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + file.string());
  out << svg.str();
}

}  // namespace

std::vector<fs::path> emit_plots(const json& doc, const fs::path& dir) {
  std::vector<fs::path> written;
  const std::string format = doc.is_object() ? doc.value("format", "") : "";

  if (format == "skelnoise-ablation") {
    if (!doc.contains("rows") || doc.at("rows").empty()) fail(ErrorKind::NothingToPlot, "ablation table has no rows");
    std::vector<std::string> order;
    std::map<std::string, Series> by_arm;
    std::vector<double> ticks;
    for (const json& r : doc.at("rows")) {
      const std::string arm = r.at("arm");
      if (!by_arm.count(arm)) {
        order.push_back(arm);
        by_arm[arm].name = arm;
      }
      const double x = r.at("noise_ratio");
      by_arm[arm].x.push_back(x);
      by_arm[arm].y.push_back(r.at("top1"));
      if (std::find(ticks.begin(), ticks.end(), x) == ticks.end()) ticks.push_back(x);
    }
    std::sort(ticks.begin(), ticks.end());
    std::vector<Series> series;
    for (const auto& arm : order) series.push_back(by_arm[arm]);
    written.push_back(dir / "accuracy_vs_noise.svg");
    line_chart(written.back(), "Top-1 test accuracy by arm", "noise ratio", "top-1 accuracy", ticks, series);
    return written;
  }

  if (format != "skelnoise-run-report" || !doc.contains("stages") || !doc.at("stages").contains("evaluate"))
    fail(ErrorKind::NothingToPlot, "no completed run to plot");
  const double r = doc.at("config").at("noise_ratio");
  std::vector<Series> series;
  for (const auto& [model, acc] : doc.at("accuracy").items()) series.push_back({model, {r}, {acc.get<double>()}});
  written.push_back(dir / "accuracy.svg");
  line_chart(written.back(), "Top-1 test accuracy", "noise ratio", "top-1 accuracy", {r}, series);

  const json& fuse = doc.at("stages").value("fuse", json::object());
  if (fuse.contains("epochs") && !fuse.at("epochs").empty()) {
    std::array<Series, 3> w{Series{"joint", {}, {}}, Series{"bone", {}, {}}, Series{"motion", {}, {}}};
    std::vector<double> ticks;
    for (const json& e : fuse.at("epochs")) {
      const double x = e.at("epoch").get<double>() + 1;
      ticks.push_back(x);
      for (int m = 0; m < 3; ++m) {
        w[m].x.push_back(x);
        w[m].y.push_back(e.at("mean_weights").at(m));
      }
    }
    written.push_back(dir / "gate_weights.svg");
    line_chart(written.back(), "Mean gate weight on the clean set", "epoch", "weight", ticks, {w.begin(), w.end()});
  }
  return written;
}

}  // namespace skelnoise
