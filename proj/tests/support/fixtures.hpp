#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "brewrank/entities.hpp"

namespace fixtures {

inline brewrank::TaskSpec job_task() {
  brewrank::TaskSpec t;
  t.task_id = "job_apply";
  t.surface = "jobs";
  t.instruction =
      "You are provided a member’s profile and a set of jobs, their description, and interactions that the "
      "member had with the jobs. For each past job, the member has taken one of the following actions: applied, "
      "viewed, dismissed, or did not interact. Your task is to analyze the job interaction data along with the "
      "member’s profile to predict whether the member will apply, view, or dismiss a new job referred to as "
      "the “Question” job.";
  t.note =
      "Focus on skills, location, and years of experience more than other criteria. In your calculation, assign a "
      "30% weight to the relevance between the member’s profile and the job description, and a 70% weight to "
      "the member’s historical activity.";
  t.action_vocabulary = {"applied", "viewed", "dismissed", "did not interact"};
  t.positive_actions = {"applied"};
  t.answer_positive = " apply";
  t.answer_negative = " not apply";
  t.action_phrases = {{"applied", "applied to"}};
  return t;
}

inline brewrank::MemberProfile job_member() {
  return {"m1",
          {{"Current position", "software engineer"},
           {"current company", "Google"},
           {"Location", "Sunnyvale, California"}},
          std::nullopt};
}

inline std::vector<brewrank::Item> job_items() {
  return {
      {"j_meta", "job", {{"Title", "Software Engineer"}, {"Location", "New York"}, {"Country", "USA"}, {"Company", "Meta"}}, "..."},
      {"j_amd", "job", {{"Title", "Software Engineer"}, {"Location", "Texas"}, {"Country", "USA"}, {"Company", "AMD"}}, "..."},
      {"j_apple", "job", {{"Title", "Software Engineer"}, {"Location", "Seattle"}, {"Country", "USA"}, {"Company", "Apple"}}, "..."},
  };
}

inline brewrank::Dataset job_dataset() {
  return brewrank::Dataset({job_member()}, job_items(),
                           {{"m1", "j_meta", "applied", 100}, {"m1", "j_amd", "viewed", 200}});
}

/// Task over the two actions a synthetic world emits.
inline brewrank::TaskSpec synth_task(std::string id = "synth_apply") {
  auto t = job_task();
  t.task_id = std::move(id);
  t.action_vocabulary = {"applied", "dismissed"};
  t.answer_negative = " dismiss";
  return t;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("brewrank_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

}  // namespace fixtures
