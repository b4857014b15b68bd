// Published per-track accuracies used as scorer inputs.
#pragma once

#include <map>
#include <string>

namespace fixtures {

using Row = std::map<std::string, double>;

inline Row row(double ocr, double acr, double atr, double stu, double fpd, double ojr, double epm,
               double asi, double hld) {
  return {{"OCR", ocr}, {"ACR", acr}, {"ATR", atr}, {"STU", stu}, {"FPD", fpd},
          {"OJR", ojr}, {"EPM", epm}, {"ASI", asi}, {"HLD", hld}};
}

// Main results table.
inline const Row kQwen25Vl7b2f = row(88.6, 67.0, 81.0, 64.6, 69.3, 79.3, 49.2, 56.8, 42.5);
inline const Row kQwen3Vl8b4f = row(94.0, 85.3, 82.8, 65.7, 77.2, 83.2, 51.9, 58.1, 52.1);
inline const Row kStreamForest = row(68.5, 53.2, 71.6, 47.8, 65.4, 60.9, 58.9, 64.9, 32.3);
inline const Row kHermes = row(85.2, 64.2, 71.6, 53.4, 74.3, 65.2, 48.5, 62.2, 37.6);

// Visual-RAG ablation table.
inline const Row kAblationBase = row(94.0, 78.9, 81.9, 64.0, 77.2, 81.5, 52.5, 58.8, 45.7);
inline const Row kAblationRag = row(85.9, 71.6, 81.9, 62.4, 74.3, 72.3, 59.6, 64.9, 33.3);

}  // namespace fixtures
