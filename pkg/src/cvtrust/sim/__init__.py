"""Scenario simulations: highway merge, intersection and route choice."""
from .config import PRESETS, ConfigError, Mode, Scenario, ScenarioConfig, load_config, parse_config
from .intersection import run_intersection
from .merge import run_highway_merge
from .routes import run_route_choice
from .world import MetricSeries

RUNNERS = {
    Scenario.HighwayMerge: run_highway_merge,
    Scenario.Intersection: run_intersection,
    Scenario.RouteChoice: run_route_choice,
}


def run_scenario(cfg: ScenarioConfig) -> MetricSeries:
    return RUNNERS[cfg.scenario](cfg)


__all__ = ["PRESETS", "ConfigError", "Mode", "Scenario", "ScenarioConfig", "MetricSeries",
           "load_config", "parse_config", "run_scenario", "run_highway_merge",
           "run_intersection", "run_route_choice"]
