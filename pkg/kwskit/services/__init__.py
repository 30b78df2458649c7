from kwskit.services.service_manager import ExperimentServiceManager

__all__ = ["ExperimentServiceManager"]
