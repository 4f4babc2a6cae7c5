// Regenerates the synthetic demo inputs under a samples directory.

#include <filesystem>
#include <iostream>

#include "confcal/report_io.hpp"
#include "confcal/synthetic.hpp"

int main(int argc, char** argv) {
    const std::filesystem::path root = argc > 1 ? argv[1] : "samples";
    const auto write = [&](const confcal::synthetic::Scenario& s, const std::string& name) {
        const auto dir = root / name;
        confcal::write_text(dir / "task.json", s.task.dump(2) + "\n");
        confcal::write_text(dir / "dataset.jsonl", s.dataset_jsonl);
        confcal::write_text(dir / "mock_script.jsonl", s.script_jsonl);
        std::cout << dir.string() << ": " << s.examples.size() << " examples\n";
    };
    const auto qa = confcal::synthetic::arithmetic_qa(50);
    write(qa, "qa");
    auto closed_book = qa.task;
    closed_book["context_field"] = "";
    confcal::write_text(root / "qa" / "task_closed_book.json", closed_book.dump(2) + "\n");
    write(confcal::synthetic::multiple_choice(20), "mc");
    return 0;
}
