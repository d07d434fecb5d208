#include "cave/tracking.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <random>
#include <set>

using namespace cave;

namespace {

Detection2D box_detection(Scalar x, Scalar y, Scalar w = 100, Scalar h = 200,
                          int camera = 0, int person = 0) {
    Detection2D det;
    det.camera_id = camera;
    det.box << x, y, w, h;
    det.truth_person_id = person;
    return det;
}

bool covariance_psd(const Eigen::Matrix<Scalar, 7, 7>& p) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<Scalar, 7, 7>> es(p);
    return es.eigenvalues().minCoeff() >= -1e-9;
}

}  // namespace

TEST_CASE("kalman predict moves the state by its velocity") {
    KalmanBox kf(Vec4(100, 100, 50, 80));
    SUBCASE("zero velocity keeps the box") {
        const Vec4 before = kf.box();
        kf.predict();
        CHECK((kf.box() - before).norm() < 1e-9);
    }
    SUBCASE("center advances by vcx") {
        kf.state()(4) = 2.0;
        const Scalar cx_before = kf.state()(0);
        kf.predict();
        CHECK(kf.state()(0) == doctest::Approx(cx_before + 2.0).epsilon(1e-12));
    }
    SUBCASE("covariance trace grows under prediction") {
        for (int i = 0; i < 20; ++i) {
            const Scalar before = kf.covariance().trace();
            kf.predict();
            CHECK(kf.covariance().trace() > before);
        }
    }
}

TEST_CASE("kalman innovation vanishes on consistent input") {
    KalmanBox kf(Vec4(50, 60, 40, 90));
    for (int i = 0; i < 60; ++i) {
        kf.predict();
        kf.update(Vec4(50.0 + 2 * (i + 1), 60, 40, 90));
    }
    // after burn-in the filter tracks the constant-velocity box exactly
    kf.predict();
    const Vec4 predicted = kf.box();
    const Vec4 truth(50.0 + 2 * 61, 60, 40, 90);
    CHECK((predicted - truth).norm() < 1e-6);
    CHECK(covariance_psd(kf.covariance()));
}

TEST_CASE("covariance stays symmetric psd across predict/update cycles") {
    std::mt19937_64 rng(4);
    std::normal_distribution<Scalar> gauss(0.0, 1.0);
    KalmanBox kf(Vec4(300, 200, 60, 120));
    for (int i = 0; i < 200; ++i) {
        kf.predict();
        CHECK(covariance_psd(kf.covariance()));
        if (i % 3 != 0) {
            kf.update(Vec4(300 + gauss(rng), 200 + gauss(rng), 60, 120));
            CHECK(covariance_psd(kf.covariance()));
        }
        CHECK((kf.covariance() - kf.covariance().transpose()).norm() < 1e-9);
    }
}

TEST_CASE("associate matches by IoU") {
    TrackerParams params;
    SortTracker tracker(params);
    tracker.step({box_detection(100, 100)}, 0);
    const auto& tracks = tracker.tracks();
    REQUIRE(tracks.size() == 1);

    SUBCASE("perfect overlap matches") {
        std::vector<Vec4> predicted = {tracks[0].filter.box()};
        const auto result = associate(predicted, tracks, {box_detection(100, 100)},
                                      0.3, 0.2);
        REQUIRE(result.matches.size() == 1);
        CHECK(result.matches[0] == std::pair<int, int>{0, 0});
    }
    SUBCASE("empty detections leave all tracks unmatched") {
        std::vector<Vec4> predicted = {tracks[0].filter.box()};
        const auto result = associate(predicted, tracks, {}, 0.3, 0.2);
        CHECK(result.matches.empty());
        CHECK(result.unmatched_tracks == std::vector<int>{0});
    }
}

TEST_CASE("momentum resolves a crossing ambiguity") {
    // two tracks heading toward each other, detections overlapping both
    // predictions equally; the direction term must decide
    TrackerParams params;
    params.momentum_weight = 0.2;
    SortTracker tracker(params);
    // build histories: track 1 moving +x, track 2 moving -x, vertically close
    for (int f = 0; f < 3; ++f) {
        tracker.step({box_detection(100.0 + 20 * f, 100, 80, 160, 0, 0),
                      box_detection(300.0 - 20 * f, 110, 80, 160, 0, 1)},
                     f);
    }
    const auto& tracks = tracker.tracks();
    REQUIRE(tracks.size() == 2);

    // at the crossing point both detections overlap both tracks
    std::vector<Detection2D> crossing = {box_detection(185, 105, 80, 160),
                                         box_detection(235, 105, 80, 160)};
    std::vector<Vec4> predicted;
    for (const auto& t : tracks) predicted.push_back(t.filter.box());
    const auto with_momentum = associate(predicted, tracks, crossing, 0.1, 0.5);
    REQUIRE(with_momentum.matches.size() == 2);
    // track 0 was moving right: it must take the right-hand detection
    for (const auto& [ti, dj] : with_momentum.matches) {
        if (tracks[ti].last_detection.truth_person_id == 0) CHECK(dj == 1);
        if (tracks[ti].last_detection.truth_person_id == 1) CHECK(dj == 0);
    }
}

TEST_CASE("tracker lifecycle and id stability") {
    TrackerParams params;
    SortTracker tracker(params);

    SUBCASE("no detections forever yields no output") {
        for (int f = 0; f < 50; ++f) {
            CHECK(tracker.step({}, f).empty());
        }
    }
    SUBCASE("a steady target confirms at min_hits and keeps one id") {
        std::set<int> ids;
        int first_confirmed_frame = -1;
        for (int f = 0; f < 100; ++f) {
            const auto out = tracker.step({box_detection(500, 400)}, f);
            for (const auto& t : out) {
                ids.insert(t.track_id);
                if (first_confirmed_frame < 0) first_confirmed_frame = f;
            }
        }
        CHECK(ids.size() == 1);
        // frames 0..min_hits-1 accumulate hits; confirmed on the min_hits-th
        CHECK(first_confirmed_frame == params.min_hits - 1);
    }
    SUBCASE("monotone frame index is enforced") {
        tracker.step({}, 0);
        CHECK_THROWS_AS(tracker.step({}, 0), NonMonotoneFrame);
    }
}

TEST_CASE("stale tracks are dropped after max_age") {
    TrackerParams params;
    params.max_age = 5;
    SortTracker tracker(params);
    for (int f = 0; f < 4; ++f) tracker.step({box_detection(100, 100)}, f);
    CHECK(tracker.tracks().size() == 1);
    for (int f = 4; f < 11; ++f) tracker.step({}, f);
    CHECK(tracker.tracks().empty());
}

TEST_CASE("occlusion gap keeps the same id and re-update fixes the velocity") {
    // stationary for 30 frames, then an 8-frame occlusion during which the
    // target moves linearly at 3 px/frame, then reappears
    const Scalar speed = 3.0;
    const int gap = 8;
    auto run = [&](bool enable_reupdate) {
        TrackerParams params;
        params.enable_reupdate = enable_reupdate;
        SortTracker tracker(params);
        int frame = 0;
        int confirmed_id = -1;
        for (; frame < 30; ++frame) {
            const auto out = tracker.step({box_detection(100, 100)}, frame);
            if (!out.empty()) confirmed_id = out[0].track_id;
        }
        for (int k = 0; k < gap; ++k) {
            tracker.step({}, frame++);
        }
        // reappears at the linearly advanced position
        const Scalar x = 100 - speed * gap;  // moving in -x
        const auto out = tracker.step({box_detection(x, 100)}, frame++);
        REQUIRE(out.size() == 1);
        CHECK(out[0].track_id == confirmed_id);

        // predicted next-frame position vs the true continuing motion
        KalmanBox filter = out[0].filter;
        filter.predict();
        const Vec4 predicted = filter.box();
        const Vec2 predicted_center(predicted(0) + predicted(2) / 2,
                                    predicted(1) + predicted(3) / 2);
        const Vec2 true_center(x - speed + 50, 100 + 100);
        return (predicted_center - true_center).norm();
    };
    const Scalar with_oru = run(true);
    const Scalar without_oru = run(false);
    CHECK(with_oru < 2.0);
    CHECK(without_oru > with_oru);
}

TEST_CASE("track ids are unique and never reused") {
    TrackerParams params;
    params.max_age = 2;
    SortTracker tracker(params);
    std::set<int> all_ids;
    int frame = 0;
    for (int episode = 0; episode < 5; ++episode) {
        std::set<int> episode_ids;
        for (int f = 0; f < 6; ++f) {
            tracker.step({box_detection(100.0 + 200 * episode, 100)}, frame++);
        }
        for (const auto& t : tracker.tracks()) episode_ids.insert(t.track_id);
        for (int f = 0; f < 5; ++f) tracker.step({}, frame++);  // let it die
        for (const int id : episode_ids) {
            CHECK_FALSE(all_ids.count(id));
            all_ids.insert(id);
        }
    }
}
