from damtccsim import FrequencySimulator
from damtccsim.analysis import default_window, settling_time, tracking_error
from damtccsim.diffusion import NetworkTopology
from damtccsim.noise import NoiseConfig
from damtccsim.phasegen import PhaseParams, ScenarioEvent, make_type_d_sag
from damtccsim.wlfilter import Algorithm


def main():
    # 1. Network and noise
    topology = NetworkTopology.fixture("topology1")
    noise = NoiseConfig(snr_db=40.0, impulse_prob=0.005, impulse_var=10.0)
    balanced = PhaseParams.from_quantities(amplitude="1 V", freq="50 Hz", sampling_rate="2.5 kHz")
    sim = FrequencySimulator(topology, noise, balanced.dt)

    # 2. Scenario: balanced, then a Type-D sag half way through
    iters = 2000
    events = [ScenarioEvent(0, balanced), ScenarioEvent(iters // 2, make_type_d_sag(0.5))]

    # 3. Tracking with both algorithms
    print("Running tracking experiment...")
    series = sim.run(events, iters, runs=1, seed=0, algorithms=(Algorithm.DAMTCC, Algorithm.DACLMS))
    print(tracking_error(series, 50.0, default_window(iters)).to_string(index=False))
    print(settling_time(series, 50.0, tol=0.1, after=iters // 2).to_string(index=False))

    # 4. Stability bound and LaTeX report
    print("\n--- Stability report ---\n")
    report = sim.stability(balanced, [0.1, 50.0], iters=2000)
    print(sim.report(report))


if __name__ == "__main__":
    main()
