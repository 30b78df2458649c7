"""
Experiment Service Manager - Centralizes access to the experiment services
"""

import importlib
import logging

from kwskit.debug_utils import debug_log, log_exception
from kwskit.errors import ConfigError, KwsError
from kwskit.kws_config import DEFAULT_CONFIG

logger = logging.getLogger(__name__)


class ExperimentServiceManager:
    """Manages access to the experiment services with lazy loading"""

    def __init__(self, config=None):
        """
        Initialize the service manager

        Args:
            config (dict, optional): Effective configuration document shared by all services
        """
        debug_log("Initializing ExperimentServiceManager")
        self.config = config or DEFAULT_CONFIG

        # Dictionary to store service instances
        self._services = {}
        # Dictionary to store service availability status
        self._availability = {}
        # Services to register; "requires" lists optional third-party packages
        self._service_registry = {
            "features": {
                "module": "kwskit.services.feature_service",
                "class": "FeatureService",
            },
            "evaluator": {
                "module": "kwskit.services.evaluation_service",
                "class": "EvaluationService",
                "depends_on": ["features"],
            },
            "trainer": {
                "module": "kwskit.services.trainer_service",
                "class": "TrainerService",
                "depends_on": ["features", "evaluator"],
            },
            "sweep": {
                "module": "kwskit.services.sweep_service",
                "class": "SweepService",
                "depends_on": ["trainer", "evaluator"],
            },
            "report": {
                "module": "kwskit.services.report_service",
                "class": "ReportService",
            },
            "figures": {
                "module": "kwskit.services.report_service",
                "class": "FigureRenderer",
                "requires": ["matplotlib"],
            },
        }

    def is_available(self, service_name):
        """
        Check if a service is available

        Args:
            service_name (str): Name of the service to check

        Returns:
            bool: True if the service is available, False otherwise
        """
        if service_name in self._availability:
            return self._availability[service_name]
        if service_name in self._services:
            self._availability[service_name] = True
            return True
        if service_name not in self._service_registry:
            self._availability[service_name] = False
            return False

        service_info = self._service_registry[service_name]

        # Optional packages must be importable
        for package in service_info.get("requires", []):
            try:
                importlib.import_module(package)
            except ImportError:
                logger.warning(f"Package {package} not installed; {service_name} is unavailable")
                self._availability[service_name] = False
                return False

        # Every dependency must be available
        for dependency in service_info.get("depends_on", []):
            if not self.is_available(dependency):
                logger.warning(f"Dependency {dependency} of {service_name} is unavailable")
                self._availability[service_name] = False
                return False

        try:
            module = importlib.import_module(service_info["module"])
        except ImportError as e:
            logger.warning(f"Error importing module {service_info['module']}: {str(e)}")
            self._availability[service_name] = False
            return False
        if not hasattr(module, service_info["class"]):
            logger.warning(f"Class {service_info['class']} not found in module {service_info['module']}")
            self._availability[service_name] = False
            return False

        self._availability[service_name] = True
        return True

    def get_service(self, service_name):
        """
        Get a service instance

        Args:
            service_name (str): Name of the service to get

        Returns:
            object: Service instance or None if not available
        """
        if service_name in self._services:
            return self._services[service_name]

        if not self.is_available(service_name):
            debug_log(f"Service {service_name} is not available", level="WARNING")
            return None

        service_info = self._service_registry[service_name]
        try:
            debug_log(f"Loading service: {service_name}")
            module = importlib.import_module(service_info["module"])
            service_class = getattr(module, service_info["class"])
            service_instance = service_class(config=self.config, manager=self)
            self._services[service_name] = service_instance
            debug_log(f"Service {service_name} loaded successfully")
            return service_instance
        except KwsError:
            # configuration problems are the caller's to report
            raise
        except Exception as e:
            log_exception(e, f"Loading service {service_name}")
            return None

    def require_service(self, service_name):
        """Like get_service, but a missing service is a usage error"""
        service = self.get_service(service_name)
        if service is None:
            raise ConfigError(f"Service '{service_name}' is not available")
        return service

    def get_available_services(self):
        """
        Get a list of available services

        Returns:
            list: List of available service names
        """
        return [name for name in self._service_registry if self.is_available(name)]
